"""Point-cloud scoring (log-scale Chamfer distance) and result aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .em_core import PhysicsConfig, RoiGrid
from .errors import DegenerateSceneError
from .scene_gen import NormStats, points_from_pixels

ZERO_CD_DB = float("-inf")  # sentinel for an exactly-zero Chamfer distance


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    method: str
    log_cd: float            # dB; -inf flags zero CD
    runtime_s: float
    num_bs: int
    num_ue: int
    snr_db: float | None = None


def kmeans2(values: np.ndarray) -> np.ndarray:
    """Two-cluster 1-D K-means; True marks the higher-centroid cluster.

    Centroids start at the min and max of the data and iterate to a fixed
    point. A constant input is degenerate: the mask comes back empty.
    """
    v = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("kmeans2 requires finite values")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=bool)
    mask = np.zeros(v.shape, dtype=bool)
    for _ in range(200):
        new_mask = np.abs(v - hi) < np.abs(v - lo)
        if new_mask.all() or not new_mask.any():
            break
        new_lo, new_hi = v[~new_mask].mean(), v[new_mask].mean()
        if np.array_equal(new_mask, mask) and new_lo == lo and new_hi == hi:
            break
        mask, lo, hi = new_mask, new_lo, new_hi
    return mask


def _min_sq_dists(a: np.ndarray, b: np.ndarray, block: int = 512) -> np.ndarray:
    """Per-row-of-a minimum squared distance to rows of b (exact arithmetic
    order: component squares accumulated left to right)."""
    out = np.empty(len(a))
    for start in range(0, len(a), block):
        diff = a[start:start + block, None, :] - b[None, :, :]
        sq = diff[..., 0] * diff[..., 0]
        for k in range(1, a.shape[1]):
            sq += diff[..., k] * diff[..., k]
        out[start:start + block] = sq.min(axis=1)
    return out


def chamfer(cloud_a: np.ndarray, cloud_b: np.ndarray) -> float:
    """Symmetric squared-distance Chamfer distance between point clouds."""
    a = np.asarray(cloud_a, dtype=float)
    b = np.asarray(cloud_b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("clouds must be (M, d) with matching d")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("clouds must be nonempty")
    ab = math.fsum(_min_sq_dists(a, b)) / len(a)
    ba = math.fsum(_min_sq_dists(b, a)) / len(b)
    return ab + ba


def log_cd(cd: float) -> float:
    """10 log10 of a Chamfer distance; zero maps to the -inf sentinel."""
    if cd < 0:
        raise ValueError("Chamfer distance cannot be negative")
    if cd == 0:
        return ZERO_CD_DB
    return 10.0 * math.log10(cd)


def reconstruction_to_point_cloud(eps_img: np.ndarray, sigma_img: np.ndarray,
                                  grid: RoiGrid, num_points: int,
                                  stats: NormStats, rng: np.random.Generator,
                                  cfg: PhysicsConfig) -> np.ndarray:
    """Normalized point cloud of a pixel reconstruction.

    Target pixels are separated from background by K-means on the combined
    contrast magnitude of the two EM blocks.
    """
    eps = np.asarray(eps_img, dtype=float).ravel()
    sig = np.asarray(sigma_img, dtype=float).ravel()
    scale = 2.0 * math.pi * cfg.center_frequency * cfg.vacuum_permittivity
    magnitude = np.hypot(eps - 1.0, sig / scale)
    mask = kmeans2(magnitude)
    if not mask.any():
        raise DegenerateSceneError("reconstruction magnitude is constant")
    raw = points_from_pixels(mask, eps, sig, grid, num_points, rng)
    return stats.normalize(raw)


def aggregate(records: list[EvalRecord]) -> dict:
    """Empirical CDFs, dB-domain means (plus linear means), and quartiles.

    Returns ``{"methods": {name: summary}, "view_table": {...}}`` where each
    summary carries mean/median/quartiles in dB, the linear-domain mean CD,
    sorted CDF support points, and the count of zero-CD samples.
    """
    if not records:
        raise ValueError("no records to aggregate")
    methods: dict[str, dict] = {}
    by_method: dict[str, list[EvalRecord]] = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    for name, recs in sorted(by_method.items()):
        vals = np.array([r.log_cd for r in recs], dtype=float)
        finite = np.sort(vals[np.isfinite(vals)])
        block = {
            "count": int(vals.size),
            "zero_cd_count": int(np.sum(~np.isfinite(vals))),
        }
        if finite.size:
            cdf_p = (np.arange(finite.size) + 1) / finite.size
            block.update({
                "mean_log_cd_db": float(finite.mean()),
                "median_log_cd_db": float(np.median(finite)),
                "q1_db": float(np.percentile(finite, 25)),
                "q3_db": float(np.percentile(finite, 75)),
                "mean_cd_linear": float(np.mean(10.0 ** (finite / 10.0))),
                "cdf_x_db": finite.tolist(),
                "cdf_p": cdf_p.tolist(),
            })
        else:  # every sample hit the zero-CD sentinel
            block.update({"mean_log_cd_db": None, "median_log_cd_db": None,
                          "q1_db": None, "q3_db": None, "mean_cd_linear": 0.0,
                          "cdf_x_db": [], "cdf_p": []})
        methods[name] = block

    view_table: dict[str, dict[str, float]] = {}
    for rec in records:
        if not np.isfinite(rec.log_cd):
            continue
        key = f"({rec.num_bs},{rec.num_ue})"
        view_table.setdefault(key, {}).setdefault(rec.method, []).append(rec.log_cd)
    view_table = {
        key: {m: float(np.mean(v)) for m, v in sorted(cell.items())}
        for key, cell in sorted(view_table.items())
    }
    return {"methods": methods, "view_table": view_table}
