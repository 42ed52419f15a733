"""Multi-view channel encoders.

Each view's CSI matrix is flattened into a real feature vector, projected
to the channel dimension, tagged with a positional embedding of its BS/UE
coordinates, fused by one of four architectures, average-pooled, and mapped
to the posterior mean/std of the target latent code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

VARIANTS = ("vs-mlp", "mv-bilstm", "mvt", "ivt")
EMBEDDINGS = ("none", "additive", "multiplicative", "affine")


@dataclass
class EncoderConfig:
    csi_dim: int                       # flattened real CSI length per view
    variant: str = "ivt"
    channel_dim: int = 256             # d_v
    num_frequencies: int = 10          # d_p
    latent_dim: int = 128              # d_z
    num_layers: int = 6                # MLP/MVT/IVT depth; BiLSTM uses 3/dir
    embedding: str = "multiplicative"
    num_heads: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"embedding must be one of {EMBEDDINGS}")


@dataclass
class LatentCode:
    mean: torch.Tensor     # (batch, d_z)
    std: torch.Tensor      # (batch, d_z), positive
    sample: torch.Tensor   # (batch, d_z), reparameterized draw

    def log_prob(self, z: torch.Tensor) -> torch.Tensor:
        var = self.std ** 2
        return (-0.5 * ((z - self.mean) ** 2 / var + torch.log(2 * math.pi * var))
                ).sum(dim=-1)


def positional_encoding(p: torch.Tensor, num_frequencies: int) -> torch.Tensor:
    """NeRF-style encoding [p; sin(2^k pi p); cos(2^k pi p)] for k < d_p."""
    parts = [p]
    for k in range(num_frequencies):
        angle = (2.0 ** k) * math.pi * p
        parts.append(torch.sin(angle))
        parts.append(torch.cos(angle))
    return torch.cat(parts, dim=-1)


class ViewEmbedding(nn.Module):
    """Injects the view position vector into the channel vector."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.mode = config.embedding
        self.num_frequencies = config.num_frequencies
        xi_dim = 4 * (2 * config.num_frequencies + 1)
        self.gamma = nn.Linear(xi_dim, config.channel_dim)
        self.beta = nn.Linear(xi_dim, config.channel_dim)

    def view_vector(self, bs_pos: torch.Tensor, ue_pos: torch.Tensor) -> torch.Tensor:
        """(.., B, 2) x (.., U, 2) -> (.., B, U, 4(2d_p+1)) pairwise."""
        xb = positional_encoding(bs_pos, self.num_frequencies)
        xu = positional_encoding(ue_pos, self.num_frequencies)
        nb, nu = xb.shape[-2], xu.shape[-2]
        xb = xb.unsqueeze(-2).expand(*xb.shape[:-2], nb, nu, xb.shape[-1])
        xu = xu.unsqueeze(-3).expand(*xu.shape[:-2], nb, nu, xu.shape[-1])
        return torch.cat([xb, xu], dim=-1)

    def forward(self, h: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
        if self.mode == "none":
            return h
        if self.mode == "additive":
            return h + self.beta(xi)
        if self.mode == "multiplicative":
            return self.gamma(xi) * h
        return self.gamma(xi) * h + self.beta(xi)  # affine


class _FeedForward(nn.Module):
    """Two-layer MLP with hidden width 2 d_v."""

    def __init__(self, dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, 2 * dim), nn.ReLU(),
                                 nn.Linear(2 * dim, dim))

    def forward(self, x):
        return self.net(x)


class _VsMlp(nn.Module):
    """Shared per-view MLP; fusion left entirely to the average pool."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        layers = []
        for i in range(config.num_layers):
            layers.append(nn.Linear(config.channel_dim, config.channel_dim))
            if i < config.num_layers - 1:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, h):
        return self.net(h)


class _MvBiLstm(nn.Module):
    """Bidirectional LSTM over the flattened view sequence (b-major)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        if config.channel_dim % 2:
            raise ValueError("channel_dim must be even for the BiLSTM")
        self.lstm = nn.LSTM(config.channel_dim, config.channel_dim // 2,
                            num_layers=3, bidirectional=True, batch_first=True)

    def forward(self, h):
        batch, nb, nu, dim = h.shape
        seq, _ = self.lstm(h.reshape(batch, nb * nu, dim))
        return seq.reshape(batch, nb, nu, dim)


class _MvtLayer(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        d = config.channel_dim
        self.norm1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, config.num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = _FeedForward(d)

    def forward(self, x):
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.ffn(self.norm2(x))


class _Mvt(nn.Module):
    """Self-attention over the unordered view set."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.layers = nn.ModuleList(_MvtLayer(config)
                                    for _ in range(config.num_layers))

    def forward(self, h):
        batch, nb, nu, dim = h.shape
        x = h.reshape(batch, nb * nu, dim)
        for layer in self.layers:
            x = layer(x)
        return x.reshape(batch, nb, nu, dim)


class _IvtLayer(nn.Module):
    """Alternating attention over the UE axis (TVA) and BS axis (RVA)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        d = config.channel_dim
        self.norm_t = nn.LayerNorm(d)
        self.tva = nn.MultiheadAttention(d, config.num_heads, batch_first=True)
        self.norm_r = nn.LayerNorm(d)
        self.rva = nn.MultiheadAttention(d, config.num_heads, batch_first=True)
        self.norm_f = nn.LayerNorm(d)
        self.ffn = _FeedForward(d)

    def forward(self, x):
        batch, nb, nu, dim = x.shape
        rows = x.reshape(batch * nb, nu, dim)
        y = self.norm_t(rows)
        rows = rows + self.tva(y, y, y, need_weights=False)[0]
        x = rows.reshape(batch, nb, nu, dim)

        cols = x.transpose(1, 2).reshape(batch * nu, nb, dim)
        y = self.norm_r(cols)
        cols = cols + self.rva(y, y, y, need_weights=False)[0]
        x = cols.reshape(batch, nu, nb, dim).transpose(1, 2)

        return x + self.ffn(self.norm_f(x))


class _Ivt(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.layers = nn.ModuleList(_IvtLayer(config)
                                    for _ in range(config.num_layers))

    def forward(self, h):
        for layer in self.layers:
            h = layer(h)
        return h


_FUSIONS = {"vs-mlp": _VsMlp, "mv-bilstm": _MvBiLstm, "mvt": _Mvt, "ivt": _Ivt}


class MultiViewEncoder(nn.Module):
    """Full posterior encoder q(z | multi-view CSI)."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        d = config.channel_dim
        self.project = nn.Linear(config.csi_dim, d)
        self.embed = ViewEmbedding(config)
        self.fusion = _FUSIONS[config.variant](config)
        self.mean_head = nn.Sequential(nn.Linear(d, d), nn.ReLU(),
                                       nn.Linear(d, config.latent_dim))
        self.var_head = nn.Sequential(nn.Linear(d, d), nn.ReLU(),
                                      nn.Linear(d, config.latent_dim))

    def pooled(self, csi: torch.Tensor, bs_pos: torch.Tensor,
               ue_pos: torch.Tensor) -> torch.Tensor:
        """Multi-view feature vector v: project, embed, fuse, average-pool.

        csi: (batch, B, U, csi_dim) real features; positions (batch, B|U, 2).
        """
        h = self.project(csi)
        xi = self.embed.view_vector(bs_pos, ue_pos)
        h = self.embed(h, xi)
        h = self.fusion(h)
        return h.mean(dim=(1, 2))

    def forward(self, csi: torch.Tensor, bs_pos: torch.Tensor,
                ue_pos: torch.Tensor,
                noise: torch.Tensor | None = None) -> LatentCode:
        v = self.pooled(csi, bs_pos, ue_pos)
        mean = self.mean_head(v)
        # the positive head output is treated as a variance
        var = nn.functional.softplus(self.var_head(v)) + 1e-8
        std = torch.sqrt(var)
        if noise is None:
            noise = torch.randn_like(mean)
        return LatentCode(mean=mean, std=std, sample=mean + std * noise)
