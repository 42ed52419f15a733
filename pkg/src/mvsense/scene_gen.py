"""Target scenes, view layouts, shape-EM point clouds, and dataset building.

A dataset is a directory: one JSON manifest plus per-sample raw tensor files
(see :mod:`mvsense.tensorio`) under ``train/``, ``val/``, ``test/``. The
manifest field names are a public, versioned contract; the learning side
consumes this directory format and nothing else.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from . import tensorio
from .em_core import ClutterPatch, PhysicsConfig, RoiGrid, TargetScene, ViewLayout
from .errors import DegenerateSceneError
from .link_sim import PilotConfig, estimate_from_channels

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")

_STD_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

@dataclass
class PointCloud:
    """M shape-EM points, columns (x, y, eps_r, sigma), possibly normalized."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 4:
            raise ValueError("point cloud must be (M, 4)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NormStats:
    """Per-dimension affine normalization statistics (training split only)."""

    mean: tuple[float, float, float, float]
    std: tuple[float, float, float, float]

    def __post_init__(self):
        if any(s <= 0 for s in self.std):
            raise ValueError("standard deviations must be positive")

    def normalize(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.array(self.mean)) / np.array(self.std)

    def denormalize(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) * np.array(self.std) + np.array(self.mean)


def compute_norm_stats(clouds: list[np.ndarray]) -> NormStats:
    """Mean/std per dimension over all raw points of the training split."""
    if len(clouds) < 2:
        raise ValueError("need at least two scenes to compute statistics")
    stacked = np.vstack([np.asarray(c, dtype=float) for c in clouds])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    if np.any(std < _STD_FLOOR):
        warnings.warn("zero-variance dimension in training points; "
                      f"inflating std to {_STD_FLOOR}", stacklevel=2)
        std = np.maximum(std, _STD_FLOOR)
    return NormStats(mean=tuple(mean), std=tuple(std))


def points_from_pixels(mask: np.ndarray, eps_r: np.ndarray, sigma: np.ndarray,
                       grid: RoiGrid, num_points: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Sample raw shape-EM points uniformly over the masked pixel area.

    Each point picks a masked pixel uniformly, jitters uniformly inside the
    pixel square, and carries that pixel's (eps_r, sigma).
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise DegenerateSceneError("no foreground pixels to sample from")
    picks = idx[rng.integers(0, idx.size, size=num_points)]
    centers = grid.pixel_centers()[picks]
    jitter = rng.uniform(-0.5, 0.5, size=(num_points, 2)) * grid.pixel_side
    eps_flat = np.asarray(eps_r, dtype=float).ravel()
    sig_flat = np.asarray(sigma, dtype=float).ravel()
    return np.column_stack([centers + jitter, eps_flat[picks], sig_flat[picks]])


def sample_shape_em_points(scene: TargetScene, grid: RoiGrid, num_points: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Raw (unnormalized) point cloud of the scene's RoI foreground."""
    return points_from_pixels(scene.foreground_mask(), scene.eps_r, scene.sigma,
                              grid, num_points, rng)


def scene_to_point_cloud(scene: TargetScene, grid: RoiGrid, num_points: int,
                         stats: NormStats, rng: np.random.Generator) -> PointCloud:
    """Normalized shape-EM point cloud of the scene."""
    raw = sample_shape_em_points(scene, grid, num_points, rng)
    return PointCloud(stats.normalize(raw))


# ---------------------------------------------------------------------------
# scene generators
# ---------------------------------------------------------------------------

def rasterize_binary_image(image: np.ndarray, eps_r: float, sigma: float,
                           grid: RoiGrid, fill_fraction: float = 0.8,
                           threshold: float = 0.5) -> TargetScene:
    """Make a homogeneous scene from a grayscale image.

    The image frame is bilinearly resampled into a centered square covering
    ``fill_fraction`` of the RoI side; pixels above ``threshold`` (after
    scaling the image to [0, 1]) become target pixels with (eps_r, sigma).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    if eps_r < 1.0 or sigma < 0.0:
        raise ValueError("target values require eps_r >= 1 and sigma >= 0")
    peak = img.max()
    if peak > 0:
        img = img / peak
    res = grid.resolution
    box = fill_fraction * res
    lo = (res - box) / 2.0
    # output pixel centers mapped linearly onto the input frame
    u = (np.arange(res) + 0.5 - lo) / box
    rows = u * img.shape[0] - 0.5
    cols = u * img.shape[1] - 0.5
    cgrid, rgrid = np.meshgrid(cols, rows)
    resampled = map_coordinates(img, [rgrid.ravel(), cgrid.ravel()],
                                order=1, mode="constant", cval=0.0)
    mask = resampled.reshape(res, res) > threshold
    if not mask.any():
        raise DegenerateSceneError("image has no foreground after thresholding")
    flat = mask.ravel()
    return TargetScene(np.where(flat, eps_r, 1.0), np.where(flat, sigma, 0.0))


@dataclass(frozen=True)
class EmRanges:
    eps_r: tuple[float, float] = (1.5, 2.5)
    sigma: tuple[float, float] = (0.0, 0.1)


class _Circle:
    def __init__(self, center, radius):
        self.center, self.radius = np.asarray(center, dtype=float), radius

    def separated(self, other) -> bool:
        if isinstance(other, _Circle):
            return np.linalg.norm(self.center - other.center) > self.radius + other.radius
        return other.separated(self)

    def mask(self, centers):
        return np.linalg.norm(centers - self.center, axis=1) <= self.radius

    def fits(self, half):
        return np.all(np.abs(self.center) + self.radius <= half)


class _Rect:
    def __init__(self, center, half_w, half_h):
        self.center = np.asarray(center, dtype=float)
        self.half = np.array([half_w, half_h])

    def separated(self, other) -> bool:
        if isinstance(other, _Rect):
            return bool(np.any(np.abs(self.center - other.center) > self.half + other.half))
        # circle vs rect: closest point on the rectangle to the circle center
        closest = np.clip(other.center, self.center - self.half, self.center + self.half)
        return np.linalg.norm(other.center - closest) > other.radius

    def mask(self, centers):
        return np.all(np.abs(centers - self.center) <= self.half, axis=1)

    def fits(self, half):
        return np.all(np.abs(self.center) + self.half <= half)


def place_objects(rng: np.random.Generator, grid: RoiGrid,
                  count_range: tuple[int, int] = (2, 4),
                  size_range: tuple[float, float] = (0.06, 0.15),
                  max_tries: int = 200) -> list:
    """Rejection-sample non-overlapping shapes that fit inside the RoI."""
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    half = grid.side_length / 2.0
    placed = []
    for _ in range(count):
        for _ in range(max_tries):
            center = rng.uniform(-half, half, size=2)
            if rng.random() < 0.5:
                shape = _Circle(center, rng.uniform(*size_range) / 2.0)
            else:
                shape = _Rect(center, rng.uniform(*size_range) / 2.0,
                              rng.uniform(*size_range) / 2.0)
            if shape.fits(half) and all(shape.separated(p) for p in placed):
                placed.append(shape)
                break
        else:
            raise DegenerateSceneError(
                f"could not place object {len(placed) + 1}/{count} "
                f"after {max_tries} tries")
    return placed


def gen_multi_obj(rng: np.random.Generator, grid: RoiGrid,
                  ranges: EmRanges = EmRanges(),
                  count_range: tuple[int, int] = (2, 4),
                  size_range: tuple[float, float] = (0.06, 0.15),
                  max_tries: int = 200) -> TargetScene:
    """Heterogeneous scene of non-overlapping rectangles and circles."""
    placed = place_objects(rng, grid, count_range, size_range, max_tries)
    centers = grid.pixel_centers()
    eps = np.ones(grid.num_pixels)
    sig = np.zeros(grid.num_pixels)
    for shape in placed:
        m = shape.mask(centers)
        eps[m] = rng.uniform(*ranges.eps_r)
        sig[m] = rng.uniform(*ranges.sigma)
    return TargetScene(eps, sig)


def sample_clutter_centers(rng: np.random.Generator, count: int,
                           band: tuple[float, float] = (0.5, 1.0)) -> np.ndarray:
    """Scatterer centers uniform over the four corner boxes
    band_lo < |x| < band_hi, band_lo < |y| < band_hi."""
    sx = rng.choice([-1.0, 1.0], size=count)
    sy = rng.choice([-1.0, 1.0], size=count)
    return np.column_stack([sx * rng.uniform(*band, size=count),
                            sy * rng.uniform(*band, size=count)])


def rasterize_clutter(centers: np.ndarray, eps_vals: np.ndarray,
                      sigma_vals: np.ndarray, grid: RoiGrid,
                      diameter: float = 0.05) -> ClutterPatch:
    """Rasterize clutter disks onto the lattice that extends the RoI mesh."""
    s = grid.pixel_side
    radius = diameter / 2.0
    seen: set[tuple[int, int]] = set()
    px_centers, px_eps, px_sig = [], [], []
    for (cx, cy), e, g in zip(np.atleast_2d(centers), eps_vals, sigma_vals):
        # lattice indices continuing the RoI pixelization outward
        i_lo = int(np.floor((cx - radius + grid.side_length / 2) / s - 0.5))
        i_hi = int(np.ceil((cx + radius + grid.side_length / 2) / s - 0.5))
        j_lo = int(np.floor((cy - radius + grid.side_length / 2) / s - 0.5))
        j_hi = int(np.ceil((cy + radius + grid.side_length / 2) / s - 0.5))
        for j in range(j_lo, j_hi + 1):
            py = -grid.side_length / 2 + (j + 0.5) * s
            for i in range(i_lo, i_hi + 1):
                px = -grid.side_length / 2 + (i + 0.5) * s
                if (px - cx) ** 2 + (py - cy) ** 2 <= radius ** 2 \
                        and (i, j) not in seen:
                    seen.add((i, j))
                    px_centers.append((px, py))
                    px_eps.append(e)
                    px_sig.append(g)
    if not px_centers:
        return ClutterPatch(np.empty((0, 2)), np.empty(0), np.empty(0))
    return ClutterPatch(np.array(px_centers), np.array(px_eps), np.array(px_sig))


def gen_clutter(rng: np.random.Generator, count: int, grid: RoiGrid,
                ranges: EmRanges = EmRanges(),
                diameter: float = 0.05,
                band: tuple[float, float] = (0.5, 1.0)) -> ClutterPatch:
    """Clutter scatterers of fixed diameter outside the RoI, one EM draw each."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0:
        return ClutterPatch(np.empty((0, 2)), np.empty(0), np.empty(0))
    centers = sample_clutter_centers(rng, count, band)
    eps_vals = rng.uniform(*ranges.eps_r, size=count)
    sigma_vals = rng.uniform(*ranges.sigma, size=count)
    return rasterize_clutter(centers, eps_vals, sigma_vals, grid, diameter)


def sample_view_layout(rng: np.random.Generator, num_bs: int, num_ue: int,
                       cfg: PhysicsConfig,
                       num_bs_antennas: int = 4,
                       bs_radius_range: tuple[float, float] = (80.0, 100.0),
                       ue_radius_range: tuple[float, float] = (4.0, 10.0)) -> ViewLayout:
    """Random ring placement: BSs far out, UEs near the RoI."""
    if not (1 <= num_bs <= 16 and 1 <= num_ue <= 32):
        raise ValueError("defaults support 1 <= B <= 16 and 1 <= U <= 32")
    br = rng.uniform(*bs_radius_range, size=num_bs)
    ba = rng.uniform(0.0, 2.0 * np.pi, size=num_bs)
    ur = rng.uniform(*ue_radius_range, size=num_ue)
    ua = rng.uniform(0.0, 2.0 * np.pi, size=num_ue)
    bs = np.column_stack([br * np.cos(ba), br * np.sin(ba)])
    ue = np.column_stack([ur * np.cos(ua), ur * np.sin(ua)])
    return ViewLayout.build(bs, ue, num_bs_antennas, cfg)


# ---------------------------------------------------------------------------
# dataset building
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    num_samples: int = 512
    seed: int = 0
    source: str = "digits"                    # "digits" | "multi-obj"
    grid_resolution: int = 32
    roi_side: float = 0.5
    num_bs: int = 8
    num_ue: int = 16
    num_bs_antennas: int = 4
    eps_range: tuple[float, float] = (1.5, 2.5)
    sigma_range: tuple[float, float] = (0.0, 0.1)
    points_per_cloud: int = 1000
    clutter_range: tuple[int, int] = (0, 0)
    bs_radius_range: tuple[float, float] = (80.0, 100.0)
    ue_radius_range: tuple[float, float] = (4.0, 10.0)
    fill_fraction: float = 0.8
    snr_db: float | None = None               # None -> store exact CSI
    num_pilots: int = 32
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)

    def split_sizes(self) -> tuple[int, int, int]:
        n = self.num_samples
        train = int(round(self.split_fractions[0] * n))
        val = int(round(self.split_fractions[1] * n))
        return train, val, max(n - train - val, 0)


def _digit_bank():
    from sklearn.datasets import load_digits  # bundled offline digit images

    return load_digits().images / 16.0, load_digits().target


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _generate_sample(config: DatasetConfig, index: int, bank=None):
    """One (scene, layout, channels, cloud, label) draw; deterministic in
    (config.seed, index) regardless of generation order."""
    from .em_core import multi_view_channels

    rng = _sample_rng(config.seed, index)
    grid = RoiGrid(config.roi_side, config.grid_resolution)
    ranges = EmRanges(config.eps_range, config.sigma_range)
    if config.source == "digits":
        images, targets = bank if bank is not None else _digit_bank()
        pick = int(rng.integers(0, len(images)))
        eps = float(rng.uniform(*config.eps_range))
        sig = float(rng.uniform(*config.sigma_range))
        scene = rasterize_binary_image(images[pick], eps, sig, grid,
                                       fill_fraction=config.fill_fraction)
        label = {"class": str(int(targets[pick])), "eps_r": eps, "sigma": sig}
    elif config.source == "multi-obj":
        scene = gen_multi_obj(rng, grid, ranges)
        fg = scene.foreground_mask()
        label = {"class": "multi", "eps_r": float(scene.eps_r[fg].mean()),
                 "sigma": float(scene.sigma[fg].mean())}
    else:
        raise ValueError(f"unknown source {config.source!r}")

    if config.clutter_range[1] > 0:
        count = int(rng.integers(config.clutter_range[0], config.clutter_range[1] + 1))
        scene.clutter = gen_clutter(rng, count, grid, ranges)

    layout = sample_view_layout(rng, config.num_bs, config.num_ue, config.physics,
                                config.num_bs_antennas, config.bs_radius_range,
                                config.ue_radius_range)
    channels = multi_view_channels(scene, grid, layout, config.physics)
    if config.snr_db is not None:
        pilot = PilotConfig(num_symbols=config.num_pilots, snr_db=config.snr_db)
        channels = estimate_from_channels(channels, pilot, rng=rng)
    cloud = sample_shape_em_points(scene, grid, config.points_per_cloud, rng)
    return scene, channels, cloud, label


def _write_sample(split_dir: Path, index: int, scene, channels, cloud,
                  resolution: int) -> None:
    stem = split_dir / f"{index:08d}"
    tensorio.write_tensor(f"{stem}.csi.bin", channels.csi)
    tensorio.write_tensor(f"{stem}.bs_pos.bin", channels.bs_positions)
    tensorio.write_tensor(f"{stem}.ue_pos.bin", channels.ue_positions)
    tensorio.write_tensor(f"{stem}.cloud.bin", cloud)
    tensorio.write_tensor(f"{stem}.eps_r.bin",
                          scene.eps_r.reshape(resolution, resolution))
    tensorio.write_tensor(f"{stem}.sigma.bin",
                          scene.sigma.reshape(resolution, resolution))
    if scene.clutter is not None and scene.clutter.num_pixels > 0:
        packed = np.column_stack([scene.clutter.centers, scene.clutter.eps_r,
                                  scene.clutter.sigma])
        tensorio.write_tensor(f"{stem}.clutter.bin", packed)


def _split_of(index: int, sizes: tuple[int, int, int]) -> str:
    if index < sizes[0]:
        return "train"
    if index < sizes[0] + sizes[1]:
        return "val"
    return "test"


def _build_one(args):
    config, index, sizes = args
    bank = _digit_bank() if config.source == "digits" else None
    scene, channels, cloud, label = _generate_sample(config, index, bank)
    return index, _split_of(index, sizes), scene, channels, cloud, label


def build_dataset(config: DatasetConfig, out_dir, workers: int = 0) -> Path:
    """Generate and write a full dataset directory; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = config.split_sizes()
    for name in SPLIT_NAMES:
        (out / name).mkdir(exist_ok=True)

    labels: dict[str, dict] = {name: {} for name in SPLIT_NAMES}
    train_clouds = []
    bank = _digit_bank() if config.source == "digits" else None

    def handle(index, split, scene, channels, cloud, label):
        try:
            _write_sample(out / split, index, scene, channels, cloud,
                          config.grid_resolution)
        except OSError as exc:
            raise OSError(f"failed writing sample {index}: {exc}") from exc
        labels[split][str(index)] = label
        if split == "train":
            train_clouds.append((index, cloud))

    if workers and workers > 1:
        jobs = [(config, i, sizes) for i in range(config.num_samples)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_build_one, jobs, chunksize=1):
                handle(*result)
    else:
        for i in range(config.num_samples):
            scene, channels, cloud, label = _generate_sample(config, i, bank)
            handle(i, _split_of(i, sizes), scene, channels, cloud, label)

    train_clouds.sort(key=lambda t: t[0])
    stats = compute_norm_stats([c for _, c in train_clouds])
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": config.seed,
        "source": config.source,
        "physics": asdict(config.physics),
        "grid": {"side_length": config.roi_side,
                 "resolution": config.grid_resolution},
        "layout": {"num_bs": config.num_bs, "num_ue": config.num_ue,
                   "num_bs_antennas": config.num_bs_antennas,
                   "bs_radius_range": list(config.bs_radius_range),
                   "ue_radius_range": list(config.ue_radius_range)},
        "em_ranges": {"eps_r": list(config.eps_range),
                      "sigma": list(config.sigma_range)},
        "clutter_range": list(config.clutter_range),
        "points_per_cloud": config.points_per_cloud,
        "fill_fraction": config.fill_fraction,
        "noise": {"snr_db": config.snr_db, "num_pilots": config.num_pilots},
        "splits": {name: sizes[k] for k, name in enumerate(SPLIT_NAMES)},
        "norm_stats": {"mean": list(stats.mean), "std": list(stats.std)},
        "labels": labels,
    }
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out


# ---------------------------------------------------------------------------
# dataset reading
# ---------------------------------------------------------------------------

class Dataset:
    """Reader for a dataset directory written by :func:`build_dataset`."""

    def __init__(self, root):
        self.root = Path(root)
        with open(self.root / MANIFEST_NAME) as fh:
            self.manifest = json.load(fh)
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported dataset format version")

    @property
    def grid(self) -> RoiGrid:
        g = self.manifest["grid"]
        return RoiGrid(g["side_length"], g["resolution"])

    @property
    def physics(self) -> PhysicsConfig:
        return PhysicsConfig(**self.manifest["physics"])

    @property
    def norm_stats(self) -> NormStats:
        ns = self.manifest["norm_stats"]
        return NormStats(mean=tuple(ns["mean"]), std=tuple(ns["std"]))

    def indices(self, split: str) -> list[int]:
        return sorted(int(p.name.split(".")[0])
                      for p in (self.root / split).glob("*.csi.bin"))

    def load(self, split: str, index: int) -> dict:
        stem = self.root / split / f"{index:08d}"
        out = {
            "csi": tensorio.read_tensor(f"{stem}.csi.bin"),
            "bs_pos": tensorio.read_tensor(f"{stem}.bs_pos.bin"),
            "ue_pos": tensorio.read_tensor(f"{stem}.ue_pos.bin"),
            "cloud": tensorio.read_tensor(f"{stem}.cloud.bin"),
            "eps_r": tensorio.read_tensor(f"{stem}.eps_r.bin"),
            "sigma": tensorio.read_tensor(f"{stem}.sigma.bin"),
            "label": self.manifest["labels"][split].get(str(index), {}),
        }
        clutter = Path(f"{stem}.clutter.bin")
        if clutter.exists():
            out["clutter"] = tensorio.read_tensor(clutter)
        return out

    def channel_set(self, split: str, index: int) -> "ChannelSet":
        from .em_core import ChannelSet

        rec = self.load(split, index)
        return ChannelSet(csi=rec["csi"], bs_positions=rec["bs_pos"],
                          ue_positions=rec["ue_pos"])
