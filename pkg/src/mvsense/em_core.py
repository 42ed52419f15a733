"""Forward electromagnetic channel model for multi-view uplink sensing.

2-D transverse-magnetic scattering over a square region of interest (RoI),
discretized with the method of moments on an equal-area-circle pixel mesh.
Each (base station, user) pair observes one complex N_r x N_c channel matrix
whose columns are per-subcarrier scattered responses of the scene.

Conventions:
  * e^{-j omega t} time dependence; the 2-D free-space kernel is
    g(r, r') = (j/4) H0^(1)(k ||r - r'||).
  * Pixels are row-major over the RoI square: index m = iy * res + ix with
    coordinates growing along +x (ix) and +y (iy).
  * Channels never include the line-of-sight term: it carries no scene
    information and is assumed removed upstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial.distance import cdist
from scipy.special import hankel1, j1

from .errors import NumericFailure

_RCOND_FLOOR = 1e-13


# ---------------------------------------------------------------------------
# configuration & geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicsConfig:
    """Carrier/subcarrier layout and free-space constants."""

    center_frequency: float = 3e9        # Hz
    subcarrier_spacing: float = 100e3    # Hz
    num_subcarriers: int = 8
    vacuum_permittivity: float = 8.8541878128e-12  # F/m
    vacuum_permeability: float = 1.25663706212e-6  # H/m
    speed_of_light: float = 299792458.0            # m/s

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("num_subcarriers must be >= 1")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier_spacing must be positive")

    @property
    def impedance(self) -> float:
        """Characteristic impedance of free space, sqrt(mu0/eps0)."""
        return math.sqrt(self.vacuum_permeability / self.vacuum_permittivity)

    @property
    def wavelength(self) -> float:
        """Wavelength at the center frequency."""
        return self.speed_of_light / self.center_frequency

    def subcarrier_frequencies(self) -> np.ndarray:
        """Subcarrier grid centered on the carrier frequency."""
        n = np.arange(self.num_subcarriers, dtype=float)
        offset = n - (self.num_subcarriers - 1) / 2.0
        return self.center_frequency + offset * self.subcarrier_spacing


@dataclass(frozen=True)
class RoiGrid:
    """Uniform pixelization of the square RoI centered at the origin."""

    side_length: float = 0.5  # m
    resolution: int = 64      # pixels per axis

    def __post_init__(self):
        if self.side_length <= 0 or self.resolution < 1:
            raise ValueError("RoiGrid requires positive side_length and resolution >= 1")

    @property
    def num_pixels(self) -> int:
        return self.resolution ** 2

    @property
    def pixel_side(self) -> float:
        return self.side_length / self.resolution

    @property
    def equivalent_radius(self) -> float:
        # equal-area circle: pi a^2 = s^2
        return self.pixel_side / math.sqrt(math.pi)

    def pixel_centers(self) -> np.ndarray:
        """(D, 2) pixel center coordinates, row-major in (iy, ix)."""
        s = self.pixel_side
        axis = -self.side_length / 2.0 + s * (np.arange(self.resolution) + 0.5)
        xs, ys = np.meshgrid(axis, axis, indexing="xy")
        return np.column_stack([xs.ravel(), ys.ravel()])

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points lying inside the RoI square."""
        p = np.atleast_2d(points)
        half = self.side_length / 2.0
        return (np.abs(p[:, 0]) <= half) & (np.abs(p[:, 1]) <= half)


@dataclass
class ClutterPatch:
    """Extra scattering pixels outside the RoI, on the same lattice pitch."""

    centers: np.ndarray  # (K, 2)
    eps_r: np.ndarray    # (K,)
    sigma: np.ndarray    # (K,)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        self.eps_r = np.asarray(self.eps_r, dtype=float).ravel()
        self.sigma = np.asarray(self.sigma, dtype=float).ravel()
        if not (len(self.centers) == len(self.eps_r) == len(self.sigma)):
            raise ValueError("clutter arrays must share length")

    @property
    def num_pixels(self) -> int:
        return len(self.eps_r)


@dataclass
class TargetScene:
    """Per-pixel relative permittivity and conductivity over the RoI grid.

    Arrays are flat (D,) in pixel order. Background pixels are
    (eps_r = 1, sigma = 0). ``clutter`` optionally extends the scattering
    support outside the RoI; it is part of the physics but never part of
    the reconstruction target.
    """

    eps_r: np.ndarray
    sigma: np.ndarray
    clutter: ClutterPatch | None = None

    def __post_init__(self):
        self.eps_r = np.asarray(self.eps_r, dtype=float).ravel()
        self.sigma = np.asarray(self.sigma, dtype=float).ravel()
        if self.eps_r.shape != self.sigma.shape:
            raise ValueError("eps_r and sigma must have identical shape")

    def validate(self) -> "TargetScene":
        if np.any(self.eps_r < 1.0) or np.any(self.sigma < 0.0):
            raise ValueError("scene requires eps_r >= 1 and sigma >= 0 everywhere")
        if self.clutter is not None:
            if np.any(self.clutter.eps_r < 1.0) or np.any(self.clutter.sigma < 0.0):
                raise ValueError("clutter requires eps_r >= 1 and sigma >= 0")
        return self

    @property
    def num_pixels(self) -> int:
        return self.eps_r.size

    def foreground_mask(self) -> np.ndarray:
        return (self.eps_r > 1.0) | (self.sigma > 0.0)

    @classmethod
    def background(cls, grid: RoiGrid) -> "TargetScene":
        d = grid.num_pixels
        return cls(np.ones(d), np.zeros(d))


@dataclass(frozen=True)
class GreenOperator:
    """Discretized inter-pixel interaction matrix at one frequency."""

    frequency: float       # Hz
    wavenumber: float      # rad/m
    matrix: np.ndarray     # (D, D) complex
    index: int | None = None


@dataclass
class ViewLayout:
    """Positions of base stations (with ULAs) and single-antenna users."""

    bs_positions: np.ndarray        # (B, 2)
    ue_positions: np.ndarray        # (U, 2)
    num_bs_antennas: int
    antenna_spacing: float          # m, between adjacent ULA elements
    antenna_positions: np.ndarray = field(init=False)  # (B, N_r, 2)

    def __post_init__(self):
        self.bs_positions = np.asarray(self.bs_positions, dtype=float).reshape(-1, 2)
        self.ue_positions = np.asarray(self.ue_positions, dtype=float).reshape(-1, 2)
        if len(self.bs_positions) < 1 or len(self.ue_positions) < 1:
            raise ValueError("layout requires at least one BS and one UE")
        if self.num_bs_antennas < 1 or self.antenna_spacing <= 0:
            raise ValueError("invalid antenna configuration")
        self.antenna_positions = self._ula_positions()

    def _ula_positions(self) -> np.ndarray:
        radii = np.linalg.norm(self.bs_positions, axis=1)
        if np.any(radii == 0):
            raise ValueError("BS at the origin has no defined array normal")
        # array normal points toward the origin; elements lie along the tangent
        normals = -self.bs_positions / radii[:, None]
        tangents = np.column_stack([-normals[:, 1], normals[:, 0]])
        offsets = (np.arange(self.num_bs_antennas) - (self.num_bs_antennas - 1) / 2.0)
        offsets = offsets * self.antenna_spacing
        return (self.bs_positions[:, None, :]
                + offsets[None, :, None] * tangents[:, None, :])

    @property
    def num_bs(self) -> int:
        return len(self.bs_positions)

    @property
    def num_ue(self) -> int:
        return len(self.ue_positions)

    @classmethod
    def build(cls, bs_positions, ue_positions, num_bs_antennas: int,
              cfg: PhysicsConfig) -> "ViewLayout":
        """Half-wavelength ULA at the carrier frequency (standard convention)."""
        return cls(bs_positions, ue_positions, num_bs_antennas, cfg.wavelength / 2.0)


@dataclass
class ChannelSet:
    """Multi-view channel data: one N_r x N_c CSI matrix per (BS, UE) pair."""

    csi: np.ndarray            # (B, U, N_r, N_c) complex
    bs_positions: np.ndarray   # (B, 2)
    ue_positions: np.ndarray   # (U, 2)

    def __post_init__(self):
        self.csi = np.asarray(self.csi, dtype=complex)
        self.bs_positions = np.asarray(self.bs_positions, dtype=float).reshape(-1, 2)
        self.ue_positions = np.asarray(self.ue_positions, dtype=float).reshape(-1, 2)
        if self.csi.ndim != 4:
            raise ValueError("csi must be (B, U, N_r, N_c)")
        if self.csi.shape[0] != len(self.bs_positions) or \
           self.csi.shape[1] != len(self.ue_positions):
            raise ValueError("csi leading dims must match position counts")

    @property
    def num_views(self) -> int:
        return self.csi.shape[0] * self.csi.shape[1]

    def entries(self):
        """Yield (H_bu, p_bs, p_ue) for every view, b-major."""
        for b in range(self.csi.shape[0]):
            for u in range(self.csi.shape[1]):
                yield self.csi[b, u], self.bs_positions[b], self.ue_positions[u]

    def frequency_slab(self, n: int) -> np.ndarray:
        """(B*N_r, U) channel matrix at subcarrier n, BS blocks stacked."""
        b, u, nr, _ = self.csi.shape
        return self.csi[:, :, :, n].transpose(0, 2, 1).reshape(b * nr, u)


# ---------------------------------------------------------------------------
# elementary operators
# ---------------------------------------------------------------------------

def wavenumber(f: float, cfg: PhysicsConfig) -> float:
    """Free-space wavenumber 2*pi*f/c."""
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    return 2.0 * math.pi * f / cfg.speed_of_light


def contrast_values(eps_r: np.ndarray, sigma: np.ndarray, f: float,
                    cfg: PhysicsConfig) -> np.ndarray:
    """Complex contrast (eps_r - 1) + j sigma / (2 pi f eps0)."""
    if f <= 0:
        raise ValueError("frequency must be positive")
    return (np.asarray(eps_r, dtype=float) - 1.0) + 1j * np.asarray(sigma, dtype=float) \
        / (2.0 * math.pi * f * cfg.vacuum_permittivity)


def contrast(scene: TargetScene, f: float, cfg: PhysicsConfig) -> np.ndarray:
    """Contrast vector of the RoI pixels at frequency f."""
    return contrast_values(scene.eps_r, scene.sigma, f, cfg)


def _pairwise_green(centers: np.ndarray, radius: float, k: float) -> np.ndarray:
    """Green matrix over arbitrary equal-area-circle cells sharing one radius."""
    dist = cdist(centers, centers)
    off = dist[~np.eye(len(centers), dtype=bool)]
    if off.size and off.min() < 1e-12:
        raise ValueError("coincident distinct pixel centers")
    ka = k * radius
    coeff = 0.5j * k * math.pi * radius
    np.fill_diagonal(dist, 1.0)  # placeholder; diagonal overwritten below
    g = coeff * j1(ka) * hankel1(0, k * dist)
    np.fill_diagonal(g, coeff * hankel1(1, ka) - 1.0)
    return g


def green_matrix(grid: RoiGrid, f: float, cfg: PhysicsConfig,
                 index: int | None = None) -> GreenOperator:
    """Discretized Green matrix of the RoI at frequency f."""
    k = wavenumber(f, cfg)
    g = _pairwise_green(grid.pixel_centers(), grid.equivalent_radius, k)
    return GreenOperator(frequency=f, wavenumber=k, matrix=g, index=index)


def _incident_columns(centers: np.ndarray, sources: np.ndarray, k: float,
                      eta: float) -> np.ndarray:
    """(D, S) incident-field map: j k eta * (j/4) H0(k||r_m - p_s||)."""
    dist = cdist(centers, np.atleast_2d(sources))
    return 1j * k * eta * 0.25j * hankel1(0, k * dist)


def _rx_rows(points: np.ndarray, centers: np.ndarray, radius: float,
             k: float) -> np.ndarray:
    """(P, D) pixel-to-receiver map with the equal-area quadrature weight."""
    dist = cdist(np.atleast_2d(points), centers)
    return 0.5j * k * math.pi * radius * j1(k * radius) * hankel1(0, k * dist)


def incident_channel(grid: RoiGrid, p: np.ndarray, f: float,
                     cfg: PhysicsConfig) -> np.ndarray:
    """Spatial channel from a point source at p to every RoI pixel."""
    p = np.asarray(p, dtype=float).reshape(2)
    if grid.contains(p)[0]:
        raise ValueError("source position inside the RoI is unsupported")
    k = wavenumber(f, cfg)
    return _incident_columns(grid.pixel_centers(), p, k, cfg.impedance)[:, 0]


def rx_channel(grid: RoiGrid, layout: ViewLayout, b: int, f: float,
               cfg: PhysicsConfig) -> np.ndarray:
    """(N_r, D) spatial channel from RoI pixels to the antennas of BS b."""
    ants = layout.antenna_positions[b]
    if np.any(grid.contains(ants)):
        raise ValueError("BS antenna inside the RoI is unsupported")
    k = wavenumber(f, cfg)
    return _rx_rows(ants, grid.pixel_centers(), grid.equivalent_radius, k)


def _factor_interaction(green: np.ndarray, chi: np.ndarray):
    """LU-factor (I - G diag(chi)), raising on near-singular systems."""
    import warnings

    from scipy.linalg import LinAlgWarning

    m = np.eye(len(chi), dtype=complex) - green * chi[None, :]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)  # rcond check below
            lu, piv = lu_factor(m)
    except np.linalg.LinAlgError as exc:  # exact singularity
        raise NumericFailure(f"singular interaction system: {exc}") from exc
    diag = np.abs(np.diagonal(lu))
    rcond = diag.min() / diag.max() if diag.max() > 0 else 0.0
    if rcond < _RCOND_FLOOR:
        raise NumericFailure(
            f"near-singular interaction system (pivot-ratio estimate {rcond:.2e})",
            condition=1.0 / max(rcond, np.finfo(float).tiny),
        )
    return lu, piv


def scattering_operator(green: GreenOperator, chi: np.ndarray) -> np.ndarray:
    """Scene response X = diag(chi) [I - G diag(chi)]^{-1}."""
    chi = np.asarray(chi, dtype=complex).ravel()
    if chi.size != green.matrix.shape[0]:
        raise ValueError("contrast length must match Green matrix size")
    lu, piv = _factor_interaction(green.matrix, chi)
    inv = lu_solve((lu, piv), np.eye(chi.size, dtype=complex))
    return chi[:, None] * inv


# ---------------------------------------------------------------------------
# scene-level synthesis
# ---------------------------------------------------------------------------

def _scene_support(scene: TargetScene, grid: RoiGrid):
    """Scattering support: RoI pixels first, then any clutter pixels."""
    if scene.num_pixels != grid.num_pixels:
        raise ValueError("scene size does not match grid")
    centers = grid.pixel_centers()
    eps, sig = scene.eps_r, scene.sigma
    if scene.clutter is not None and scene.clutter.num_pixels > 0:
        centers = np.vstack([centers, scene.clutter.centers])
        eps = np.concatenate([eps, scene.clutter.eps_r])
        sig = np.concatenate([sig, scene.clutter.sigma])
    return centers, eps, sig


class ForwardOperators:
    """Read-only per-frequency operator cache for a fixed grid and layout.

    Build once and share across scenes/workers; the arrays are never
    mutated after construction. Covers the RoI support only, so it also
    serves the inversion side (which never models clutter).
    """

    def __init__(self, grid: RoiGrid, layout: ViewLayout, cfg: PhysicsConfig):
        self.grid = grid
        self.layout = layout
        self.cfg = cfg
        centers = grid.pixel_centers()
        if np.any(grid.contains(layout.antenna_positions.reshape(-1, 2))) or \
           np.any(grid.contains(layout.ue_positions)):
            raise ValueError("transceivers must lie outside the RoI")
        radius = grid.equivalent_radius
        eta = cfg.impedance
        ants = layout.antenna_positions.reshape(-1, 2)
        self.frequencies = cfg.subcarrier_frequencies()
        self.green: list[GreenOperator] = []
        self.h_ur: list[np.ndarray] = []   # (D, U) per subcarrier
        self.h_rb: list[np.ndarray] = []   # (B*N_r, D) per subcarrier
        for n, f in enumerate(self.frequencies):
            k = wavenumber(f, cfg)
            self.green.append(GreenOperator(
                frequency=f, wavenumber=k, index=n,
                matrix=_pairwise_green(centers, radius, k)))
            self.h_ur.append(_incident_columns(centers, layout.ue_positions, k, eta))
            self.h_rb.append(_rx_rows(ants, centers, radius, k))


def single_view_channel(scene: TargetScene, grid: RoiGrid, layout: ViewLayout,
                        b: int, u: int, cfg: PhysicsConfig,
                        born: bool = False) -> np.ndarray:
    """Exact (N_r, N_c) CSI matrix of the (b, u) view."""
    full = multi_view_channels(scene, grid, layout, cfg, born=born)
    return full.csi[b, u]


def multi_view_channels(scene: TargetScene, grid: RoiGrid, layout: ViewLayout,
                        cfg: PhysicsConfig, born: bool = False,
                        ops: ForwardOperators | None = None) -> ChannelSet:
    """Synthesize exact CSI for every view and subcarrier.

    With ``born=True`` the scene response is linearized to diag(chi),
    i.e. the first-order Born approximation. A prebuilt ``ops`` cache is
    only usable for clutter-free scenes (it spans the RoI support).
    """
    scene.validate()
    nb, nu, nr = layout.num_bs, layout.num_ue, layout.num_bs_antennas
    nc = cfg.num_subcarriers
    csi = np.empty((nb, nu, nr, nc), dtype=complex)

    use_cache = ops is not None and (scene.clutter is None or scene.clutter.num_pixels == 0)
    if use_cache and (ops.grid is not grid or ops.layout is not layout):
        raise ValueError("operator cache was built for a different geometry")
    centers, eps, sig = _scene_support(scene, grid)
    if not use_cache:
        if np.any(grid.contains(layout.antenna_positions.reshape(-1, 2))) or \
           np.any(grid.contains(layout.ue_positions)):
            raise ValueError("transceivers must lie outside the RoI")

    radius = grid.equivalent_radius
    eta = cfg.impedance
    ants = layout.antenna_positions.reshape(-1, 2)
    for n, f in enumerate(cfg.subcarrier_frequencies()):
        chi = contrast_values(eps, sig, f, cfg)
        if use_cache:
            green_n = ops.green[n].matrix
            h_ur = ops.h_ur[n]
            h_rb = ops.h_rb[n]
        else:
            k = wavenumber(f, cfg)
            green_n = _pairwise_green(centers, radius, k)
            h_ur = _incident_columns(centers, layout.ue_positions, k, eta)
            h_rb = _rx_rows(ants, centers, radius, k)
        if born or not np.any(chi):
            e_total = h_ur
        else:
            lu, piv = _factor_interaction(green_n, chi)
            e_total = lu_solve((lu, piv), h_ur)
        slab = h_rb @ (chi[:, None] * e_total)          # (B*N_r, U)
        csi[:, :, :, n] = slab.reshape(nb, nr, nu).transpose(0, 2, 1)

    return ChannelSet(csi=csi, bs_positions=layout.bs_positions.copy(),
                      ue_positions=layout.ue_positions.copy())


def scattered_field(scene: TargetScene, grid: RoiGrid, obs_points: np.ndarray,
                    source: np.ndarray, f: float, cfg: PhysicsConfig) -> np.ndarray:
    """Scattered field at arbitrary exterior points for a unit-pilot source."""
    scene.validate()
    obs = np.atleast_2d(np.asarray(obs_points, dtype=float))
    src = np.asarray(source, dtype=float).reshape(2)
    if grid.contains(src)[0] or np.any(grid.contains(obs)):
        raise ValueError("source and observation points must lie outside the RoI")
    centers, eps, sig = _scene_support(scene, grid)
    k = wavenumber(f, cfg)
    chi = contrast_values(eps, sig, f, cfg)
    h_inc = _incident_columns(centers, src, k, cfg.impedance)[:, 0]
    if np.any(chi):
        lu, piv = _factor_interaction(_pairwise_green(centers, grid.equivalent_radius, k), chi)
        e_total = lu_solve((lu, piv), h_inc)
    else:
        e_total = h_inc
    rows = _rx_rows(obs, centers, grid.equivalent_radius, k)
    return rows @ (chi * e_total)
