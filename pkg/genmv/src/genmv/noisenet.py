"""Conditional noise predictor built from gated ConcatSquash layers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass
class NoiseNetConfig:
    widths: tuple = (4, 128, 256, 512, 256, 128, 4)
    time_dim: int = 32          # d_t, sinusoidal timestep encoding length
    latent_dim: int = 128       # d_z

    def __post_init__(self):
        if self.widths[0] != self.widths[-1]:
            raise ValueError("input and output widths must match the point dim")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


def timestep_encoding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """zeta(t)[2i] = sin(t / 10000^(2i/d)), zeta(t)[2i+1] = cos(...)."""
    t = torch.as_tensor(t, dtype=torch.get_default_dtype()).reshape(-1, 1)
    i = torch.arange(dim // 2, dtype=t.dtype, device=t.device)
    rate = t / torch.pow(torch.tensor(10000.0, dtype=t.dtype, device=t.device),
                         2 * i / dim)
    out = torch.empty(t.shape[0], dim, dtype=t.dtype, device=t.device)
    out[:, 0::2] = torch.sin(rate)
    out[:, 1::2] = torch.cos(rate)
    return out


class ConcatSquash(nn.Module):
    """(W1 h + b1) * sigmoid(W2 c + b2) + W3 c, with context c = [zeta_t; z]."""

    def __init__(self, dim_in: int, dim_out: int, dim_ctx: int):
        super().__init__()
        self.lin = nn.Linear(dim_in, dim_out)
        self.gate = nn.Linear(dim_ctx, dim_out)
        self.bias = nn.Linear(dim_ctx, dim_out, bias=False)

    def forward(self, h, ctx):
        return self.lin(h) * torch.sigmoid(self.gate(ctx)) + self.bias(ctx)


class NoisePredictor(nn.Module):
    """Per-point noise estimate conditioned on timestep and latent code."""

    def __init__(self, config: NoiseNetConfig = NoiseNetConfig()):
        super().__init__()
        self.config = config
        ctx_dim = config.time_dim + config.latent_dim
        self.layers = nn.ModuleList(
            ConcatSquash(a, b, ctx_dim)
            for a, b in zip(config.widths[:-1], config.widths[1:]))
        self.act = nn.LeakyReLU()

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                z: torch.Tensor) -> torch.Tensor:
        """x: (batch, M, point_dim); t: (batch,) 1-based; z: (batch, d_z)."""
        zeta = timestep_encoding(t, self.config.time_dim).to(z.dtype)
        ctx = torch.cat([zeta, z], dim=-1).unsqueeze(1)   # (batch, 1, ctx)
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h, ctx)
            if i < len(self.layers) - 1:
                h = self.act(h)
        return h
