"""Random rotation and zoom of whole volumes, and a check of spherical-domain invariance."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from .schemas import GridConfig
from .spherical_transform import Interpolation, Origin, build_grid, forward_transform
from .volume_core import (
    LabelVolume,
    MultiChannelVolume,
    ScalarVolume,
    Spacing,
    volume_center_mm,
    zscore_normalize,
)

AnyVolume = Union[ScalarVolume, LabelVolume, MultiChannelVolume]


@dataclass(frozen=True)
class RotateZoom:
    angles_deg: Tuple[float, float, float]
    zoom: float
    center_mm: Tuple[float, float, float]

    def to_dict(self) -> dict:
        return {"angles_deg": list(self.angles_deg), "zoom": self.zoom, "center_mm": list(self.center_mm)}


def rotation_matrix(angles_deg: Sequence[float]) -> np.ndarray:
    """Rotation about x, then y, then z (degrees)."""
    ax, ay, az = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _warp(data: np.ndarray, spacing: Spacing, params: RotateZoom, order: int) -> np.ndarray:
    # output mm p maps back to input mm c + R^T (p - c) / zoom
    scale = spacing.as_array()
    center = np.asarray(params.center_mm, dtype=np.float64)
    inverse = rotation_matrix(params.angles_deg).T / params.zoom
    matrix = np.diag(1.0 / scale) @ inverse @ np.diag(scale)
    offset = (center - inverse @ center) / scale
    return ndimage.affine_transform(
        np.asarray(data, dtype=np.float64), matrix, offset=offset, order=order, mode="constant", cval=0.0
    )


def rotate_zoom(
    volume: AnyVolume,
    angles_deg: Sequence[float],
    zoom: float,
    center_mm: Optional[Sequence[float]] = None,
) -> AnyVolume:
    """
    Rotates and scales the volume about center_mm (default: the volume center) on
    its own grid. Scalars use trilinear and labels nearest interpolation; voxels
    mapping outside the input become 0.
    """
    if zoom <= 0:
        raise ValueError(f"zoom must be positive, got {zoom}")
    if center_mm is None:
        center_mm = volume_center_mm(volume.dims, volume.spacing)
    params = RotateZoom(tuple(float(a) for a in angles_deg), float(zoom), tuple(float(c) for c in center_mm))

    if isinstance(volume, MultiChannelVolume):
        channels = tuple(rotate_zoom(c, angles_deg, zoom, center_mm) for c in volume.channels)
        return MultiChannelVolume(channels, volume.names)
    if isinstance(volume, LabelVolume):
        warped = _warp(volume.data, volume.spacing, params, order=0)
        return LabelVolume(np.rint(warped).astype(np.uint8), volume.spacing)
    return ScalarVolume(_warp(volume.data, volume.spacing, params, order=1).astype(np.float32), volume.spacing)


def random_rotate_zoom(
    volume: AnyVolume,
    rng: np.random.Generator,
    max_angle_deg: float = 180.0,
    zoom_range: Tuple[float, float] = (0.8, 1.25),
    labels: Optional[LabelVolume] = None,
):
    """
    Draws angles uniformly in [-max_angle_deg, max_angle_deg] and a zoom uniformly in
    zoom_range. Returns (augmented volume, augmented labels or None, parameters).
    """
    angles = tuple(float(a) for a in rng.uniform(-max_angle_deg, max_angle_deg, size=3))
    zoom = float(rng.uniform(*zoom_range))
    center = volume_center_mm(volume.dims, volume.spacing)
    augmented = rotate_zoom(volume, angles, zoom, center)
    warped_labels = rotate_zoom(labels, angles, zoom, center) if labels is not None else None
    return augmented, warped_labels, RotateZoom(angles, zoom, center)


def _centered_spherical(volume: ScalarVolume, grid_cfg: GridConfig) -> np.ndarray:
    origin = Origin.from_sequence(volume_center_mm(volume.dims, volume.spacing))
    grid = build_grid(volume, origin, grid_cfg.n_r, grid_cfg.n_theta, grid_cfg.n_phi, grid_cfg.r_max_mode)
    spherical = forward_transform(volume, grid, Interpolation.TRILINEAR)
    return np.asarray(zscore_normalize(spherical).data, dtype=np.float64)


def invariance_score(volume: ScalarVolume, augmented: ScalarVolume, grid_cfg: GridConfig) -> Tuple[float, int]:
    """
    Mean absolute difference between the centered, normalized spherical transforms of
    two volumes, minimized over circular theta shifts. Returns (score, best shift).
    """
    reference = _centered_spherical(volume, grid_cfg)
    moved = _centered_spherical(augmented, grid_cfg)

    scores = [float(np.abs(np.roll(moved, -shift, axis=1) - reference).mean()) for shift in range(grid_cfg.n_theta)]
    best = int(np.argmin(scores))
    return scores[best], best
