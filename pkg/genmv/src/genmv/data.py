"""Dataset-directory reader and batch sampler.

The sensing toolkit writes one JSON manifest plus per-sample tensor files
under train/ val/ test/. CSI tensors arrive complex (B, U, N_r, N_c) and
are flattened per view into real/imaginary-interleaved feature vectors;
point clouds are normalized with the manifest's training statistics. A
scalar CSI scale (mean |H| over the training split) keeps the encoder
inputs O(1).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .tensors import read_tensor

SPLITS = ("train", "val", "test")


def csi_features(csi: np.ndarray) -> np.ndarray:
    """(B, U, N_r, N_c) complex -> (B, U, 2*N_r*N_c) interleaved real."""
    flat = csi.reshape(csi.shape[0], csi.shape[1], -1)
    stacked = np.stack([flat.real, flat.imag], axis=-1)
    return stacked.reshape(csi.shape[0], csi.shape[1], -1)


class SensingDataset:
    def __init__(self, root, dtype=torch.float32):
        self.root = Path(root)
        self.dtype = dtype
        with open(self.root / "manifest.json") as fh:
            self.manifest = json.load(fh)
        ns = self.manifest["norm_stats"]
        self.norm_mean = np.asarray(ns["mean"], dtype=float)
        self.norm_std = np.asarray(ns["std"], dtype=float)
        self._csi_scale = None

    def indices(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        return sorted(int(p.name.split(".")[0])
                      for p in (self.root / split).glob("*.csi.bin"))

    @property
    def csi_scale(self) -> float:
        if self._csi_scale is None:
            total, count = 0.0, 0
            for idx in self.indices("train"):
                csi = read_tensor(self.root / "train" / f"{idx:08d}.csi.bin")
                total += float(np.abs(csi).sum())
                count += csi.size
            if count == 0:
                raise ValueError("dataset has no training samples")
            self._csi_scale = total / count
        return self._csi_scale

    def normalize_cloud(self, cloud: np.ndarray) -> np.ndarray:
        return (cloud - self.norm_mean) / self.norm_std

    def denormalize_cloud(self, cloud: np.ndarray) -> np.ndarray:
        return cloud * self.norm_std + self.norm_mean

    def label(self, split: str, index: int) -> dict:
        return self.manifest["labels"][split].get(str(index), {})

    def sample(self, split: str, index: int) -> dict:
        stem = self.root / split / f"{index:08d}"
        csi = read_tensor(f"{stem}.csi.bin")
        cloud = read_tensor(f"{stem}.cloud.bin")
        return {
            "csi": torch.as_tensor(csi_features(csi) / self.csi_scale,
                                   dtype=self.dtype),
            "bs_pos": torch.as_tensor(read_tensor(f"{stem}.bs_pos.bin"),
                                      dtype=self.dtype),
            "ue_pos": torch.as_tensor(read_tensor(f"{stem}.ue_pos.bin"),
                                      dtype=self.dtype),
            "cloud": torch.as_tensor(self.normalize_cloud(cloud),
                                     dtype=self.dtype),
            "index": index,
        }

    def load_split(self, split: str, limit: int | None = None) -> dict:
        """Stack a whole split into batched tensors (desk-scale datasets)."""
        indices = self.indices(split)
        if limit is not None:
            indices = indices[:limit]
        if not indices:
            raise ValueError(f"split {split!r} is empty")
        samples = [self.sample(split, i) for i in indices]
        return {
            "csi": torch.stack([s["csi"] for s in samples]),
            "bs_pos": torch.stack([s["bs_pos"] for s in samples]),
            "ue_pos": torch.stack([s["ue_pos"] for s in samples]),
            "cloud": torch.stack([s["cloud"] for s in samples]),
            "indices": indices,
        }

    @property
    def csi_feature_dim(self) -> int:
        layout = self.manifest["layout"]
        physics = self.manifest["physics"]
        return 2 * layout["num_bs_antennas"] * physics["num_subcarriers"]


def batch_iterator(split_data: dict, batch_size: int, seed: int = 0,
                   generator: torch.Generator | None = None):
    """Endless uniform minibatch stream over a stacked split."""
    gen = generator or torch.Generator().manual_seed(seed)
    count = split_data["csi"].shape[0]
    while True:
        pick = torch.randint(0, count, (batch_size,), generator=gen)
        yield {
            "csi": split_data["csi"][pick],
            "bs_pos": split_data["bs_pos"][pick],
            "ue_pos": split_data["ue_pos"][pick],
            "cloud": split_data["cloud"][pick],
        }
