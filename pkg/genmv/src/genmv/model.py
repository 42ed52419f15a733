"""Full conditional generation model: encoder + flow prior + diffusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .diffusion import diffuse_forward, sample_reverse
from .encoder import EncoderConfig, LatentCode, MultiViewEncoder
from .flowprior import FlowPrior, kl_to_flow_prior
from .noisenet import NoiseNetConfig, NoisePredictor
from .schedule import DiffusionSchedule


@dataclass
class LossWeights:
    shape: float = 0.45      # gamma_s, point dims 1-2
    em: float = 0.05         # gamma_EM, point dims 3-4
    latent: float = 1e-4     # gamma_z on the flow-prior KL

    def __post_init__(self):
        if self.shape < 0 or self.em < 0:
            raise ValueError("shape and EM weights must be nonnegative")

    @classmethod
    def standard(cls) -> "LossWeights":
        # equivalent to the unweighted diffusion loss (1/4M) sum ||eps-eps_hat||^2
        return cls(shape=0.25, em=0.25)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = None
    noise_net: NoiseNetConfig = field(default_factory=NoiseNetConfig)
    num_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    flow_layers: int = 4
    flow_hidden: int = 128

    def __post_init__(self):
        if self.encoder is None:
            raise ValueError("encoder config is required")
        if self.noise_net.latent_dim != self.encoder.latent_dim:
            self.noise_net = NoiseNetConfig(
                widths=self.noise_net.widths,
                time_dim=self.noise_net.time_dim,
                latent_dim=self.encoder.latent_dim)


class GenMVModel(nn.Module):
    """Encoder q(z|H), flow prior p(z), and conditional noise predictor."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = MultiViewEncoder(config.encoder)
        self.flow = FlowPrior(config.encoder.latent_dim, config.flow_layers,
                              config.flow_hidden)
        self.noise_net = NoisePredictor(config.noise_net)
        self.schedule = DiffusionSchedule(config.num_steps, config.beta_start,
                                          config.beta_end)

    def encode(self, csi, bs_pos, ue_pos, noise=None) -> LatentCode:
        return self.encoder(csi, bs_pos, ue_pos, noise=noise)

    def loss(self, csi, bs_pos, ue_pos, clouds, weights: LossWeights,
             fixed: dict | None = None):
        """Shape-EM weighted diffusion loss plus the flow-prior KL.

        ``fixed`` may pin {"z_noise", "t", "eps"} for deterministic
        evaluation (gradient checks, unit tests).
        """
        fixed = fixed or {}
        batch, num_points, _ = clouds.shape
        latent = self.encode(csi, bs_pos, ue_pos, noise=fixed.get("z_noise"))
        t = fixed.get("t")
        if t is None:
            t = torch.randint(1, self.schedule.num_steps + 1, (batch,),
                              device=clouds.device)
        eps = fixed.get("eps")
        if eps is None:
            eps = torch.randn_like(clouds)
        x_t = diffuse_forward(clouds, t, eps, self.schedule)
        eps_hat = self.noise_net(x_t, t, latent.sample)
        err = eps - eps_hat
        loss_shape = (err[..., :2] ** 2).sum(dim=-1)     # per point, dims 1-2
        loss_em = (err[..., 2:] ** 2).sum(dim=-1)        # per point, dims 3-4
        diff_term = (weights.shape * loss_shape
                     + weights.em * loss_em).sum(dim=1) / num_points
        kl_term = kl_to_flow_prior(latent, self.flow)
        total = (diff_term + weights.latent * kl_term).mean()
        if not torch.isfinite(total):
            raise FloatingPointError(
                f"non-finite loss (diffusion {diff_term.mean().item()!r}, "
                f"KL {kl_term.mean().item()!r})")
        parts = {"diffusion": float(diff_term.mean().detach()),
                 "kl": float(kl_term.mean().detach())}
        return total, parts

    @torch.no_grad()
    def reconstruct(self, csi, bs_pos, ue_pos, num_points: int,
                    convention: str = "std",
                    generator: torch.Generator | None = None) -> torch.Tensor:
        """Algorithm-2 inference: sample z from the posterior, then run the
        reverse diffusion down to the point cloud."""
        noise = None
        if generator is not None:
            probe = self.encoder.mean_head[-1]
            noise = torch.randn(csi.shape[0], probe.out_features,
                                generator=generator, dtype=csi.dtype)
        latent = self.encode(csi, bs_pos, ue_pos, noise=noise)
        return sample_reverse(latent.sample, self.schedule, self.noise_net,
                              num_points, convention=convention,
                              generator=generator)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 128
    learning_rate: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_every: int = 100_000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    log_every: int = 100


def train(model: GenMVModel, batches, config: TrainConfig,
          on_step=None) -> list[float]:
    """Algorithm-1 training loop over an iterable of batch dicts.

    ``batches`` yields {"csi", "bs_pos", "ue_pos", "cloud"} tensors; the
    loop runs for config.steps optimizer steps and returns the loss trace.
    """
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=config.lr_decay_every, gamma=config.lr_decay)
    losses = []
    it = iter(batches)
    for step in range(config.steps):
        batch = next(it)
        optimizer.zero_grad()
        loss, parts = model.loss(batch["csi"], batch["bs_pos"],
                                 batch["ue_pos"], batch["cloud"],
                                 config.weights)
        loss.backward()
        optimizer.step()
        scheduler.step()
        losses.append(float(loss.detach()))
        if on_step is not None:
            on_step(step, losses[-1], parts)
    return losses
