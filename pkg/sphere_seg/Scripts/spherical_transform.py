"""
Cartesian <-> spherical resampling about a chosen origin.

Conventions:
    r     distance from the origin in mm
    theta azimuth in the x-y plane, atan2(dy, dx), in (-pi, pi]
    phi   elevation from the x-y plane, asin(dz / r), in [-pi/2, pi/2]

Grid index (a, b, c) maps to
    r_a     = a * r_max / (n_r - 1)
    theta_b = -pi + b * 2*pi / n_theta      (periodic, no duplicate +pi bin)
    phi_c   = -pi/2 + c * pi / (n_phi - 1)
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .config import settings
from .exceptions import (
    EmptyVolumeError,
    InterpolationModeError,
    InvalidVolumeError,
)
from .volume_core import (
    LABEL_DTYPE,
    SCALAR_DTYPE,
    LabelVolume,
    ScalarVolume,
    Spacing,
    check_label_values,
    volume_extent_mm,
)

# Output rows processed per worker task
R_CHUNK: int = 8


class Interpolation(str, Enum):
    TRILINEAR = "trilinear"
    NEAREST = "nearest"


class RadiusMode(str, Enum):
    SURFACE = "surface"
    CORNERS = "corners"


@dataclass(frozen=True, slots=True)
class Origin:
    """Centre of a spherical transform, in mm."""
    x0: float
    y0: float
    z0: float

    def __post_init__(self) -> None:
        if not all(np.isfinite(v) for v in (self.x0, self.y0, self.z0)):
            raise InvalidVolumeError(f"Origin must be finite, got {(self.x0, self.y0, self.z0)}")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Origin":
        x, y, z = (float(v) for v in values)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.z0], dtype=np.float64)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.x0, self.y0, self.z0)


@dataclass(frozen=True, slots=True)
class SphericalGrid:
    n_r: int
    n_theta: int
    n_phi: int
    r_max: float
    origin: Origin

    def __post_init__(self) -> None:
        if self.n_r < 2 or self.n_phi < 2 or self.n_theta < 4:
            raise InvalidVolumeError(
                f"Grid needs n_r, n_phi >= 2 and n_theta >= 4, got ({self.n_r}, {self.n_theta}, {self.n_phi})"
            )
        if not (np.isfinite(self.r_max) and self.r_max > 0):
            raise InvalidVolumeError(f"r_max must be positive, got {self.r_max}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.n_r, self.n_theta, self.n_phi)

    @property
    def r_step(self) -> float:
        return self.r_max / (self.n_r - 1)

    @property
    def theta_step(self) -> float:
        return 2.0 * np.pi / self.n_theta

    @property
    def phi_step(self) -> float:
        return np.pi / (self.n_phi - 1)

    def radii(self) -> np.ndarray:
        return np.arange(self.n_r, dtype=np.float64) * self.r_step

    def thetas(self) -> np.ndarray:
        return -np.pi + np.arange(self.n_theta, dtype=np.float64) * self.theta_step

    def phis(self) -> np.ndarray:
        return -np.pi / 2.0 + np.arange(self.n_phi, dtype=np.float64) * self.phi_step

    def to_dict(self) -> dict:
        return {
            "n_r": self.n_r,
            "n_theta": self.n_theta,
            "n_phi": self.n_phi,
            "r_max": self.r_max,
            "origin": list(self.origin.as_tuple()),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SphericalGrid":
        return cls(
            n_r=int(payload["n_r"]),
            n_theta=int(payload["n_theta"]),
            n_phi=int(payload["n_phi"]),
            r_max=float(payload["r_max"]),
            origin=Origin.from_sequence(payload["origin"]),
        )


@dataclass(frozen=True, slots=True)
class SphericalVolume:
    """Resampled data indexed [a, b, c] = (r, theta, phi)."""
    grid: SphericalGrid
    data: np.ndarray
    is_label: bool = False

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.shape != self.grid.shape:
            raise InvalidVolumeError(f"Spherical data shape {data.shape} does not match grid {self.grid.shape}")
        if self.is_label:
            check_label_values(data)
            data = data.astype(LABEL_DTYPE)
        else:
            data = data.astype(SCALAR_DTYPE)
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.grid.shape

    @property
    def spacing(self) -> Spacing:
        """Grid steps (mm, rad, rad); only used when the volume is serialized."""
        return Spacing(self.grid.r_step, self.grid.theta_step, self.grid.phi_step)

    def with_data(self, data: np.ndarray) -> "SphericalVolume":
        return SphericalVolume(self.grid, data, self.is_label)


# --- Point mappings ---
def cart_to_sph(p, o: Origin):
    """
    Maps mm point(s) to (r, theta, phi) about the origin. Accepts a single point or
    an array whose last axis has length 3. At r = 0 both angles are 0.
    """
    delta = np.asarray(p, dtype=np.float64) - o.as_array()
    dx, dy, dz = delta[..., 0], delta[..., 1], delta[..., 2]
    r = np.sqrt(dx * dx + dy * dy + dz * dz)

    theta = np.arctan2(dy, dx)
    theta = np.where(theta == -np.pi, np.pi, theta)
    # equals asin(dz / r), without its precision loss near the poles
    phi = np.arctan2(dz, np.hypot(dx, dy))
    theta = np.where(r > 0, theta, 0.0)
    phi = np.where(r > 0, phi, 0.0)

    if delta.ndim == 1:
        return float(r), float(theta), float(phi)
    return r, theta, phi


def sph_to_cart(r, theta, phi, o: Origin):
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(r < 0):
        raise InvalidVolumeError("Radius must be non-negative")

    cos_phi = np.cos(phi)
    x = o.x0 + r * cos_phi * np.cos(theta)
    y = o.y0 + r * cos_phi * np.sin(theta)
    z = o.z0 + r * np.sin(phi)
    if np.ndim(x) == 0 and np.ndim(z) == 0:
        return float(x), float(y), float(z)
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


# --- Adaptive radius ---
def volume_corners_mm(dims: Sequence[int], spacing: Spacing) -> np.ndarray:
    extent = volume_extent_mm(dims, spacing)
    return np.array(
        [[ex, ey, ez] for ex in (0.0, extent[0]) for ey in (0.0, extent[1]) for ez in (0.0, extent[2])]
    )


def compute_r_max(v: ScalarVolume, o: Origin, mode: Union[RadiusMode, str] = RadiusMode.SURFACE) -> float:
    """Farthest distance from the origin to the brain surface or to the volume corners."""
    mode = RadiusMode(mode)
    if mode is RadiusMode.CORNERS:
        corners = volume_corners_mm(v.dims, v.spacing)
        return float(np.linalg.norm(corners - o.as_array(), axis=1).max())

    indices = np.argwhere(np.asarray(v.data) != 0)
    if indices.size == 0:
        raise EmptyVolumeError("Surface-mode r_max needs at least one nonzero voxel")
    points = indices * v.spacing.as_array()
    return float(np.sqrt(((points - o.as_array()) ** 2).sum(axis=1)).max())


def compute_r_max_with_fallback(v: ScalarVolume, o: Origin) -> Tuple[float, RadiusMode]:
    try:
        return compute_r_max(v, o, RadiusMode.SURFACE), RadiusMode.SURFACE
    except EmptyVolumeError:
        logging.warning("⚠️ Empty volume: r_max falls back to the volume corners")
        return compute_r_max(v, o, RadiusMode.CORNERS), RadiusMode.CORNERS


def build_grid(
    v: ScalarVolume,
    origin: Origin,
    n_r: int = settings.PROJECT.DEFAULT_N_R,
    n_theta: int = settings.PROJECT.DEFAULT_N_THETA,
    n_phi: int = settings.PROJECT.DEFAULT_N_PHI,
    mode: Union[RadiusMode, str] = RadiusMode.SURFACE,
) -> SphericalGrid:
    """Builds a grid with adaptive r_max; surface mode falls back to corners on empty input."""
    if RadiusMode(mode) is RadiusMode.SURFACE:
        r_max, _ = compute_r_max_with_fallback(v, origin)
    else:
        r_max = compute_r_max(v, origin, mode)
    if r_max <= 0:
        # a single nonzero voxel sitting on the origin
        r_max = float(min(v.spacing.sx, v.spacing.sy, v.spacing.sz))
    return SphericalGrid(n_r, n_theta, n_phi, r_max, origin)


# --- Sampling kernels ---
def _sample(data: np.ndarray, frac: np.ndarray, interp: Interpolation) -> np.ndarray:
    """Samples data at fractional voxel indices frac (..., 3); out of bounds -> 0."""
    shape = np.asarray(data.shape, dtype=np.float64)
    coords = np.moveaxis(frac, -1, 0)

    if interp is Interpolation.NEAREST:
        idx = np.floor(coords + 0.5).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < shape.reshape(3, *([1] * (idx.ndim - 1)))), axis=0)
        out = np.zeros(frac.shape[:-1], dtype=data.dtype)
        out[inside] = data[idx[0][inside], idx[1][inside], idx[2][inside]]
        return out

    upper = (shape - 1.0).reshape(3, *([1] * (coords.ndim - 1)))
    inside = np.all((coords >= 0) & (coords <= upper), axis=0)
    values = ndimage.map_coordinates(data, coords, output=np.float64, order=1, mode="nearest")
    return np.where(inside, values, 0.0)


def _grid_points_mm(grid: SphericalGrid, rows: slice) -> np.ndarray:
    r = grid.radii()[rows][:, None, None]
    theta = grid.thetas()[None, :, None]
    phi = grid.phis()[None, None, :]
    return sph_to_cart(r, theta, phi, grid.origin)


def forward_transform(
    v: Union[ScalarVolume, LabelVolume],
    grid: SphericalGrid,
    interp: Union[Interpolation, str] = Interpolation.TRILINEAR,
    threads: int = 1,
) -> SphericalVolume:
    """
    Resamples a Cartesian volume onto the spherical grid. Output rows along r are
    split into chunks sampled by a thread pool; each chunk writes a disjoint slice so
    the result does not depend on the number of threads.
    """
    interp = Interpolation(interp)
    is_label = isinstance(v, LabelVolume)
    if is_label and interp is not Interpolation.NEAREST:
        raise InterpolationModeError("Label volumes must be resampled with nearest interpolation")

    data = np.asarray(v.data)
    spacing = v.spacing.as_array()
    out = np.zeros(grid.shape, dtype=LABEL_DTYPE if is_label else np.float64)

    def work(start: int) -> None:
        rows = slice(start, min(start + R_CHUNK, grid.n_r))
        frac = _grid_points_mm(grid, rows) / spacing
        out[rows] = _sample(data, frac, interp)

    starts = range(0, grid.n_r, R_CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)

    return SphericalVolume(grid, out, is_label=is_label)


def inverse_project_labels(
    s: SphericalVolume,
    target_dims: Sequence[int],
    target_spacing: Spacing,
    threads: int = 1,
) -> LabelVolume:
    """Nearest-neighbour back-projection of spherical labels onto a Cartesian grid."""
    if not s.is_label:
        raise InterpolationModeError("Only label volumes can be back-projected")

    grid = s.grid
    dims = tuple(int(n) for n in target_dims)
    out = np.zeros(dims, dtype=LABEL_DTYPE)
    labels = np.asarray(s.data)
    spacing = target_spacing.as_array()

    jj, kk = np.meshgrid(np.arange(dims[1]), np.arange(dims[2]), indexing="ij")

    def work(start: int) -> None:
        stop = min(start + R_CHUNK, dims[0])
        ii = np.arange(start, stop)[:, None, None]
        points = np.stack(np.broadcast_arrays(ii, jj[None], kk[None]), axis=-1) * spacing
        r, theta, phi = cart_to_sph(points, grid.origin)

        a = np.floor(r / grid.r_step + 0.5).astype(np.int64)
        b = np.mod(np.floor((theta + np.pi) / grid.theta_step + 0.5).astype(np.int64), grid.n_theta)
        c = np.clip(np.floor((phi + np.pi / 2.0) / grid.phi_step + 0.5).astype(np.int64), 0, grid.n_phi - 1)
        inside = (r <= grid.r_max) & (a < grid.n_r)

        block = np.zeros(r.shape, dtype=LABEL_DTYPE)
        block[inside] = labels[a[inside], b[inside], c[inside]]
        out[start:stop] = block

    starts = range(0, dims[0], R_CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)

    return LabelVolume(out, target_spacing)


# --- 2D polar transform ---
def polar_transform_2d(
    img: np.ndarray,
    origin: Sequence[float],
    n_r: int,
    n_theta: int,
    r_max: Optional[float] = None,
    spacing: Sequence[float] = (1.0, 1.0),
) -> np.ndarray:
    """
    Polar resampling of a 2D image indexed [i, j] = (x, y). output[a, b] is the
    bilinear sample at origin + r_a * (cos theta_b, sin theta_b). Without an explicit
    r_max the farthest nonzero pixel is used (corners for an empty image).
    """
    if n_r < 2 or n_theta < 4:
        raise InvalidVolumeError(f"Polar grid needs n_r >= 2 and n_theta >= 4, got ({n_r}, {n_theta})")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidVolumeError(f"Polar transform expects a 2D image, got shape {img.shape}")

    spacing = np.asarray(spacing, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if r_max is None:
        r_max = polar_r_max(img, origin, spacing)

    radii = np.arange(n_r) * (r_max / (n_r - 1))
    thetas = -np.pi + np.arange(n_theta) * (2.0 * np.pi / n_theta)
    x = origin[0] + radii[:, None] * np.cos(thetas)[None, :]
    y = origin[1] + radii[:, None] * np.sin(thetas)[None, :]

    coords = np.stack([x / spacing[0], y / spacing[1]])
    upper = (np.asarray(img.shape, dtype=np.float64) - 1.0).reshape(2, 1, 1)
    inside = np.all((coords >= 0) & (coords <= upper), axis=0)
    values = ndimage.map_coordinates(img, coords, order=1, mode="nearest")
    return np.where(inside, values, 0.0)


def polar_r_max(img: np.ndarray, origin: np.ndarray, spacing: np.ndarray) -> float:
    indices = np.argwhere(img != 0)
    if indices.size == 0:
        extent = np.asarray(img.shape) * spacing
        points = np.array([[ex, ey] for ex in (0.0, extent[0]) for ey in (0.0, extent[1])])
    else:
        points = indices * spacing
    r_max = float(np.sqrt(((points - origin) ** 2).sum(axis=1)).max())
    return r_max if r_max > 0 else float(spacing.min())
