"""Multi-view wireless sensing toolkit.

Synthesizes multi-view, multi-subcarrier CSI from first-principles 2-D
electromagnetic scattering, simulates pilot-based LS channel estimation,
reconstructs targets with Born-iterative baselines, and scores results
with the log-scale Chamfer distance on shape-EM point clouds.
"""

__version__ = "0.1.0"

from .em_core import (
    ChannelSet,
    ClutterPatch,
    ForwardOperators,
    GreenOperator,
    PhysicsConfig,
    RoiGrid,
    TargetScene,
    ViewLayout,
    contrast,
    green_matrix,
    incident_channel,
    multi_view_channels,
    rx_channel,
    scattering_operator,
    single_view_channel,
    wavenumber,
)
from .errors import DegenerateSceneError, NumericFailure

__all__ = [
    "ChannelSet",
    "ClutterPatch",
    "DegenerateSceneError",
    "ForwardOperators",
    "GreenOperator",
    "NumericFailure",
    "PhysicsConfig",
    "RoiGrid",
    "TargetScene",
    "ViewLayout",
    "contrast",
    "green_matrix",
    "incident_channel",
    "multi_view_channels",
    "rx_channel",
    "scattering_operator",
    "single_view_channel",
    "wavenumber",
]
