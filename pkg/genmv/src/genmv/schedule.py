"""Diffusion noise-variance schedule."""

from __future__ import annotations

import torch


class DiffusionSchedule:
    """Linear beta schedule with the derived alpha quantities.

    Timesteps are 1-based (t = 1..T). ``alpha_bar`` uses the convention
    alpha_bar(0) = 1, which makes beta_tilde(1) = 0: the final reverse step
    is deterministic.
    """

    def __init__(self, num_steps: int = 100, beta_start: float = 1e-4,
                 beta_end: float = 0.02, dtype=torch.float32):
        if num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        self.num_steps = num_steps
        betas = torch.linspace(beta_start, beta_end, num_steps, dtype=dtype)
        alphas = 1.0 - betas
        alpha_bars = torch.cumprod(alphas, dim=0)
        self._betas = betas
        self._alphas = alphas
        self._alpha_bars = alpha_bars

    def _pick(self, table: torch.Tensor, t) -> torch.Tensor:
        idx = torch.as_tensor(t, dtype=torch.long) - 1
        if torch.any(idx < 0) or torch.any(idx >= self.num_steps):
            raise ValueError(f"timestep out of range 1..{self.num_steps}")
        return table[idx]

    def beta(self, t):
        return self._pick(self._betas, t)

    def alpha(self, t):
        return self._pick(self._alphas, t)

    def alpha_bar(self, t):
        idx = torch.as_tensor(t, dtype=torch.long)
        if torch.any(idx < 0) or torch.any(idx > self.num_steps):
            raise ValueError(f"timestep out of range 0..{self.num_steps}")
        ones = torch.ones_like(idx, dtype=self._alpha_bars.dtype)
        return torch.where(idx == 0, ones, self._alpha_bars[(idx - 1).clamp(min=0)])

    def beta_tilde(self, t):
        t = torch.as_tensor(t)
        return (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) \
            * self.beta(t)

    def to(self, dtype=None, device=None) -> "DiffusionSchedule":
        out = DiffusionSchedule.__new__(DiffusionSchedule)
        out.num_steps = self.num_steps
        out._betas = self._betas.to(dtype=dtype, device=device)
        out._alphas = self._alphas.to(dtype=dtype, device=device)
        out._alpha_bars = self._alpha_bars.to(dtype=dtype, device=device)
        return out
