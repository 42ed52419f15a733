"""Pilot transmission, receiver noise, and LS channel estimation.

Produces the non-ideal CSI actually seen by a sensing pipeline: each view's
exact channel is observed through QPSK pilots, white circularly-symmetric
noise, and least-squares estimation.

Noise calibration: the per-view noise power is tied to that view's simulated
received signal power, either at a fixed target SNR (the sweep knob used in
the evaluations) or through the radar-equation SNR evaluated with the view's
own transmit/receive ranges. The radar-equation form also serves as the
human-facing feasibility check for CLI parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .em_core import (
    ChannelSet,
    PhysicsConfig,
    RoiGrid,
    TargetScene,
    ViewLayout,
    multi_view_channels,
)

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2.0)


@dataclass(frozen=True)
class PilotConfig:
    """Pilot burst description; ``snr_db=None`` means noiseless."""

    num_symbols: int = 32
    snr_db: float | None = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.num_symbols < 1:
            raise ValueError("num_symbols must be >= 1")


@dataclass(frozen=True)
class SnrModel:
    """Radar-equation link budget (linear units except where noted)."""

    transmit_power: float = 0.19952623149688797   # 23 dBm in W
    gain_tx: float = 1.9952623149688795            # 3 dBi
    gain_rx: float = 1.9952623149688795            # 3 dBi
    wavelength: float = 299792458.0 / 3e9          # m
    rcs: float = 0.001                             # m^2
    range_tx: float = 10.0                         # m, UE to target
    range_rx: float = 100.0                        # m, target to BS
    temperature: float = 290.0                     # K
    boltzmann: float = 1.380649e-23                # J/K
    bandwidth: float = 8 * 100e3                   # Hz, N_c * subcarrier spacing


def snr_linear(model: SnrModel) -> float:
    """Received SNR of the radar equation, per receive antenna element."""
    vals = [model.transmit_power, model.gain_tx, model.gain_rx, model.wavelength,
            model.range_tx, model.range_rx, model.temperature, model.boltzmann,
            model.bandwidth]
    if any(v <= 0 for v in vals) or model.rcs < 0:
        raise ValueError("SnrModel entries must be positive (rcs >= 0)")
    signal = (model.transmit_power * model.gain_tx * model.gain_rx
              * model.wavelength ** 2 * model.rcs
              / ((4.0 * math.pi) ** 3 * model.range_tx ** 2 * model.range_rx ** 2))
    noise = model.boltzmann * model.temperature * model.bandwidth
    return signal / noise


def qpsk_pilots(rng: np.random.Generator, num_symbols: int) -> np.ndarray:
    """Unit-power QPSK pilot symbols drawn i.i.d. from {+-1 +-j}/sqrt(2)."""
    return _QPSK[rng.integers(0, 4, size=num_symbols)]


def simulate_rx(h: np.ndarray, pilots: np.ndarray, noise_power: float,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Received pilot block Y = h s^T + Z, per-entry noise variance as given."""
    h = np.asarray(h, dtype=complex).ravel()
    s = np.asarray(pilots, dtype=complex).ravel()
    if noise_power < 0:
        raise ValueError("noise_power must be nonnegative")
    y = np.outer(h, s)
    if noise_power > 0:
        rng = np.random.default_rng() if rng is None else rng
        scale = math.sqrt(noise_power / 2.0)
        z = rng.normal(0.0, scale, size=(len(h), len(s), 2))
        y = y + z[..., 0] + 1j * z[..., 1]
    return y


def ls_estimate(y: np.ndarray, pilots: np.ndarray) -> np.ndarray:
    """Least-squares channel estimate h_hat = Y s* (s^T s*)^{-1}."""
    s = np.asarray(pilots, dtype=complex).ravel()
    energy = s @ np.conjugate(s)
    if abs(energy) == 0:
        raise ValueError("pilot sequence has zero energy")
    return np.asarray(y, dtype=complex) @ np.conjugate(s) / energy


def estimate_from_channels(channels: ChannelSet, pilot_cfg: PilotConfig,
                           rng: np.random.Generator | None = None,
                           snr_model: SnrModel | None = None) -> ChannelSet:
    """Replace exact CSI with per-(b, u, n) LS estimates.

    Per-view noise power = (view's mean received power) / SNR, where SNR is
    the fixed ``pilot_cfg.snr_db`` target or, when ``snr_model`` is given,
    the radar-equation value at that view's UE/BS ranges.
    """
    rng = np.random.default_rng(pilot_cfg.seed) if rng is None else rng
    nb, nu, _, nc = channels.csi.shape
    est = np.empty_like(channels.csi)
    target = None if pilot_cfg.snr_db is None else 10.0 ** (pilot_cfg.snr_db / 10.0)
    for b in range(nb):
        r_rx = float(np.linalg.norm(channels.bs_positions[b]))
        for u in range(nu):
            view = channels.csi[b, u]
            if snr_model is not None:
                r_tx = float(np.linalg.norm(channels.ue_positions[u]))
                snr = snr_linear(replace(snr_model, range_tx=r_tx, range_rx=r_rx))
            else:
                snr = target
            power = float(np.mean(np.abs(view) ** 2))
            noise_power = 0.0 if snr is None else power / snr
            for n in range(nc):
                s = qpsk_pilots(rng, pilot_cfg.num_symbols)
                y = simulate_rx(view[:, n], s, noise_power, rng)
                est[b, u, :, n] = ls_estimate(y, s)
    return ChannelSet(csi=est, bs_positions=channels.bs_positions.copy(),
                      ue_positions=channels.ue_positions.copy())


def estimate_channel_set(scene: TargetScene, grid: RoiGrid, layout: ViewLayout,
                         cfg: PhysicsConfig, pilot_cfg: PilotConfig,
                         snr_model: SnrModel | None = None) -> ChannelSet:
    """Simulate exact channels, then observe them through pilots + LS."""
    exact = multi_view_channels(scene, grid, layout, cfg)
    return estimate_from_channels(exact, pilot_cfg, snr_model=snr_model)
