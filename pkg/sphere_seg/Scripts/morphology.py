"""
Binary 3D morphology on boolean voxel grids.

Foreground objects use 26-connectivity, background (holes) 6-connectivity.
Erosion and dilation default to the 6-neighbour element; opening defaults to the
full 3x3x3 neighbourhood so that blocks at least 3 voxels wide survive unchanged.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import EmptyComponentError, InvalidVolumeError
from .volume_core import Spacing

FACE_CONNECTIVITY: int = 1
FULL_CONNECTIVITY: int = 3

# Default hole-fill threshold, matching the smallest object threshold
DEFAULT_MAX_HOLE_MM3: float = 30.0


def _structure(connectivity: int) -> np.ndarray:
    if connectivity not in (FACE_CONNECTIVITY, 2, FULL_CONNECTIVITY):
        raise InvalidVolumeError(f"Connectivity must be 1, 2 or 3, got {connectivity}")
    return ndimage.generate_binary_structure(3, connectivity)


def _as_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise InvalidVolumeError(f"Expected a 3D mask, got shape {mask.shape}")
    return mask


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected components: 0 is background, ids 1..count are dense."""
    labels: np.ndarray
    count: int
    voxel_counts: np.ndarray
    volumes_mm3: np.ndarray
    spacing: Spacing

    def component(self, component_id: int) -> np.ndarray:
        return self.labels == component_id

    def largest_id(self) -> int:
        """Largest component by volume; ties go to the lower id. 0 when empty."""
        if self.count == 0:
            return 0
        return int(np.argmax(self.volumes_mm3)) + 1

    def ids_by_volume(self) -> List[int]:
        """Component ids sorted by volume descending, ties by id."""
        order = sorted(range(self.count), key=lambda i: (-self.volumes_mm3[i], i))
        return [i + 1 for i in order]


def connected_components(mask, spacing: Spacing, connectivity: int = FULL_CONNECTIVITY) -> ComponentLabeling:
    """
    Labels connected foreground voxels. Ids follow the first voxel met in a
    row-major scan.
    """
    mask = _as_mask(mask)
    raw, count = ndimage.label(mask, structure=_structure(connectivity))
    if count == 0:
        return ComponentLabeling(raw.astype(np.int32), 0, np.zeros(0, np.int64), np.zeros(0), spacing)

    # Relabel by first occurrence in the flattened (row-major) order
    flat = raw.ravel()
    ids, first_index = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first_index = ids[keep], first_index[keep]
    order = ids[np.argsort(first_index, kind="stable")]
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order] = np.arange(1, count + 1, dtype=np.int32)
    labels = remap[raw]

    voxel_counts = np.bincount(labels.ravel(), minlength=count + 1)[1:].astype(np.int64)
    return ComponentLabeling(labels, int(count), voxel_counts, voxel_counts * spacing.voxel_volume, spacing)


def erode(mask, iterations: int = 1, connectivity: int = FACE_CONNECTIVITY) -> np.ndarray:
    """Erosion; voxels outside the volume count as background."""
    mask = _as_mask(mask)
    if iterations < 0:
        raise InvalidVolumeError("iterations must be >= 0")
    if iterations == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_erosion(mask, structure=_structure(connectivity), iterations=iterations, border_value=0)


def dilate(mask, iterations: int = 1, connectivity: int = FACE_CONNECTIVITY) -> np.ndarray:
    mask = _as_mask(mask)
    if iterations < 0:
        raise InvalidVolumeError("iterations must be >= 0")
    # scipy treats iterations=0 as "until stable"
    if iterations == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=_structure(connectivity), iterations=iterations)


def open(mask, iterations: int = 1, connectivity: int = FULL_CONNECTIVITY) -> np.ndarray:
    """Erosion followed by dilation with the same element and count; idempotent."""
    if iterations < 1:
        raise InvalidVolumeError("Opening needs at least one iteration")
    return dilate(erode(mask, iterations, connectivity), iterations, connectivity)


def remove_small_objects(mask, min_volume_mm3: float, spacing: Spacing) -> np.ndarray:
    """Deletes components with volume strictly below min_volume_mm3."""
    mask = _as_mask(mask)
    if min_volume_mm3 < 0:
        raise InvalidVolumeError("min_volume_mm3 must be >= 0")
    if min_volume_mm3 == 0 or not mask.any():
        return mask.copy()

    labeling = connected_components(mask, spacing)
    small = np.flatnonzero(labeling.volumes_mm3 < min_volume_mm3) + 1
    if small.size == 0:
        return mask.copy()
    return mask & ~np.isin(labeling.labels, small)


def fill_holes(mask, max_hole_mm3: float, spacing: Spacing) -> np.ndarray:
    """Fills enclosed background pockets (6-connected, off the border) below max_hole_mm3."""
    mask = _as_mask(mask)
    if max_hole_mm3 < 0:
        raise InvalidVolumeError("max_hole_mm3 must be >= 0")

    background = connected_components(~mask, spacing, connectivity=FACE_CONNECTIVITY)
    if background.count == 0:
        return mask.copy()

    labels = background.labels
    touching = np.unique(np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ]))
    ids = np.arange(1, background.count + 1)
    holes = ids[(background.volumes_mm3 < max_hole_mm3) & ~np.isin(ids, touching)]
    return mask | np.isin(labels, holes)


def object_centroids(labeling: ComponentLabeling, spacing: Spacing) -> List[Tuple[float, float, float]]:
    """Centroids in mm, ordered by component volume descending (ties by id)."""
    if labeling.count == 0:
        return []
    ids = labeling.ids_by_volume()
    centers = ndimage.center_of_mass(np.ones(labeling.labels.shape), labeling.labels, ids)
    scale = spacing.as_array()
    return [tuple(float(v) for v in np.asarray(center) * scale) for center in centers]


def bounding_box_mm(component, spacing: Spacing) -> Tuple[float, float, float]:
    """Inclusive per-axis extent of a component, in mm."""
    component = _as_mask(component)
    indices = np.argwhere(component)
    if indices.size == 0:
        raise EmptyComponentError("Bounding box of an empty component")
    extent = (indices.max(axis=0) - indices.min(axis=0) + 1) * spacing.as_array()
    return tuple(float(v) for v in extent)
