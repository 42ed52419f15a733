"""Normalizing-flow latent prior (affine coupling layers)."""

from __future__ import annotations

import math

import torch
from torch import nn


class AffineCoupling(nn.Module):
    """RealNVP-style coupling: one half conditions an affine map of the other.

    Zero-initialized output layers make the initial map the identity with
    zero log-determinant.
    """

    def __init__(self, dim: int, hidden: int = 128, flip: bool = False):
        super().__init__()
        self.dim = dim
        self.split = dim // 2
        self.flip = flip
        cond = self.split if not flip else dim - self.split
        free = dim - cond
        self.net = nn.Sequential(nn.Linear(cond, hidden), nn.ReLU(),
                                 nn.Linear(hidden, hidden), nn.ReLU(),
                                 nn.Linear(hidden, 2 * free))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def _halves(self, x):
        a, b = x[..., :self.split], x[..., self.split:]
        return (b, a) if self.flip else (a, b)

    def _join(self, cond, free):
        parts = (free, cond) if self.flip else (cond, free)
        return torch.cat(parts, dim=-1)

    def _scale_shift(self, cond):
        raw = self.net(cond)
        s, t = raw.chunk(2, dim=-1)
        return torch.tanh(s), t

    def forward(self, w):
        """w -> z with log|det dz/dw|."""
        cond, free = self._halves(w)
        s, t = self._scale_shift(cond)
        z_free = free * torch.exp(s) + t
        return self._join(cond, z_free), s.sum(dim=-1)

    def inverse(self, z):
        """z -> w with log|det dw/dz| (= -forward logdet)."""
        cond, free = self._halves(z)
        s, t = self._scale_shift(cond)
        w_free = (free - t) * torch.exp(-s)
        return self._join(cond, w_free), -s.sum(dim=-1)


class FlowPrior(nn.Module):
    """Learnable prior p(z): base Gaussian pushed through coupling layers."""

    def __init__(self, dim: int, num_layers: int = 4, hidden: int = 128):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(
            AffineCoupling(dim, hidden, flip=bool(i % 2))
            for i in range(num_layers))

    def forward(self, w):
        """Base sample w -> z, with total log|det dz/dw|."""
        logdet = torch.zeros(w.shape[:-1], dtype=w.dtype, device=w.device)
        z = w
        for layer in self.layers:
            z, ld = layer(z)
            logdet = logdet + ld
        return z, logdet

    def inverse(self, z):
        """z -> base w, with total log|det dw/dz|."""
        logdet = torch.zeros(z.shape[:-1], dtype=z.dtype, device=z.device)
        w = z
        for layer in reversed(self.layers):
            w, ld = layer.inverse(w)
            logdet = logdet + ld
        return w, logdet

    def log_prob(self, z):
        w, logdet_inv = self.inverse(z)
        base = -0.5 * (w ** 2 + math.log(2 * math.pi)).sum(dim=-1)
        return base + logdet_inv


def kl_to_flow_prior(latent, flow: FlowPrior) -> torch.Tensor:
    """Single-sample Monte-Carlo KL(q(z|H) || p_flow(z)), per batch element."""
    z = latent.sample
    if torch.any(latent.std <= 0):
        raise ValueError("latent std must be positive")
    log_q = latent.log_prob(z)
    log_p = flow.log_prob(z)
    out = log_q - log_p
    if not torch.all(torch.isfinite(out)):
        raise FloatingPointError("non-finite flow-prior KL estimate")
    return out
