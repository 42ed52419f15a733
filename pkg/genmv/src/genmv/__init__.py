"""Conditional point-cloud diffusion for multi-view wireless sensing."""

__version__ = "0.1.0"

from .data import SensingDataset, batch_iterator, csi_features
from .diffusion import diffuse_forward, reverse_step, sample_reverse
from .encoder import (
    EncoderConfig,
    LatentCode,
    MultiViewEncoder,
    ViewEmbedding,
    positional_encoding,
)
from .flowprior import AffineCoupling, FlowPrior, kl_to_flow_prior
from .model import GenMVModel, LossWeights, ModelConfig, TrainConfig, train
from .noisenet import NoiseNetConfig, NoisePredictor, timestep_encoding
from .schedule import DiffusionSchedule

__all__ = [
    "AffineCoupling",
    "DiffusionSchedule",
    "EncoderConfig",
    "FlowPrior",
    "GenMVModel",
    "LatentCode",
    "LossWeights",
    "ModelConfig",
    "MultiViewEncoder",
    "NoiseNetConfig",
    "NoisePredictor",
    "SensingDataset",
    "TrainConfig",
    "ViewEmbedding",
    "batch_iterator",
    "csi_features",
    "diffuse_forward",
    "kl_to_flow_prior",
    "positional_encoding",
    "reverse_step",
    "sample_reverse",
    "timestep_encoding",
    "train",
]
