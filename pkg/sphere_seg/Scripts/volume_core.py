"""
Volume and mask types shared by every stage of the pipeline.

Geometry convention: arrays are indexed [i, j, k] = (x, y, z) and voxel (i, j, k)
sits at mm (i*sx, j*sy, k*sz). There is no orientation matrix; the inputs are
co-registered, skull-stripped volumes.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .config import settings
from .exceptions import (
    DegenerateVolumeError,
    DimensionMismatchError,
    InvalidLabelError,
    InvalidVolumeError,
)

BRATS_LABELS: Tuple[int, ...] = settings.PROJECT.BRATS_LABELS
LABEL_DTYPE = np.uint8
SCALAR_DTYPE = np.float32


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, slots=True)
class Spacing:
    """Millimetres per voxel along x, y and z."""
    sx: float
    sy: float
    sz: float

    def __post_init__(self) -> None:
        values = (self.sx, self.sy, self.sz)
        if not all(np.isfinite(v) and v > 0 for v in values):
            raise InvalidVolumeError(f"Spacing must be strictly positive, got {values}")

    @classmethod
    def isotropic(cls, size: float = 1.0) -> "Spacing":
        return cls(size, size, size)

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "Spacing":
        sx, sy, sz = (float(v) for v in values)
        return cls(sx, sy, sz)

    def as_array(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz], dtype=np.float64)

    @property
    def voxel_volume(self) -> float:
        return self.sx * self.sy * self.sz


@dataclass(frozen=True, slots=True)
class ScalarVolume:
    data: np.ndarray
    spacing: Spacing

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=SCALAR_DTYPE)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidVolumeError(f"Scalar volume must be a non-empty 3D grid, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidVolumeError("Scalar volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def extent_mm(self) -> np.ndarray:
        return volume_extent_mm(self.dims, self.spacing)

    def with_data(self, data: np.ndarray) -> "ScalarVolume":
        return ScalarVolume(data, self.spacing)


@dataclass(frozen=True, slots=True)
class MultiChannelVolume:
    """Co-registered MR channels (T1, T1c, T2, FLAIR by convention)."""
    channels: Tuple[ScalarVolume, ...]
    names: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        channels = tuple(self.channels)
        if not channels:
            raise InvalidVolumeError("A multichannel volume needs at least one channel")
        first = channels[0]
        for channel in channels[1:]:
            if channel.dims != first.dims or channel.spacing != first.spacing:
                raise DimensionMismatchError(
                    f"Channel geometry differs: {channel.dims}/{channel.spacing} vs {first.dims}/{first.spacing}"
                )
        names = tuple(self.names) or tuple(_default_channel_names(len(channels)))
        if len(names) != len(channels):
            raise InvalidVolumeError(f"{len(names)} channel names for {len(channels)} channels")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "names", names)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.channels[0].dims

    @property
    def spacing(self) -> Spacing:
        return self.channels[0].spacing

    def stacked(self) -> np.ndarray:
        """Channels stacked on a trailing axis, shape (nx, ny, nz, C)."""
        return np.stack([c.data for c in self.channels], axis=-1)


def _default_channel_names(count: int) -> List[str]:
    known = settings.PROJECT.CHANNEL_NAMES
    return [known[i] if i < len(known) else f"ch{i}" for i in range(count)]


@dataclass(frozen=True, slots=True)
class LabelVolume:
    """BraTS raw labels: 0 background, 1 necrosis/non-enhancing, 2 edema, 4 enhancing."""
    data: np.ndarray
    spacing: Spacing

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidVolumeError(f"Label volume must be a non-empty 3D grid, got shape {data.shape}")
        check_label_values(data)
        object.__setattr__(self, "data", _frozen(data.astype(LABEL_DTYPE)))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @classmethod
    def empty(cls, dims: Sequence[int], spacing: Spacing) -> "LabelVolume":
        return cls(np.zeros(tuple(dims), dtype=LABEL_DTYPE), spacing)


class Region(str, Enum):
    WT = "WT"
    TC = "TC"
    ET = "ET"


# Raw labels belonging to each evaluation region
REGION_LABELS = {
    Region.WT: (1, 2, 4),
    Region.TC: (1, 4),
    Region.ET: (4,),
}


@dataclass(frozen=True, slots=True)
class RegionMask:
    region: Region
    data: np.ndarray
    spacing: Spacing

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise InvalidVolumeError(f"Region mask must be 3D, got shape {data.shape}")
        if data.dtype != bool:
            if not np.isin(data, (0, 1)).all():
                raise InvalidVolumeError("Region mask must be binary")
            data = data.astype(bool)
        object.__setattr__(self, "region", Region(self.region))
        object.__setattr__(self, "data", _frozen(data))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())

    @property
    def volume_mm3(self) -> float:
        return self.voxel_count * self.spacing.voxel_volume

    def with_data(self, data: np.ndarray) -> "RegionMask":
        return RegionMask(self.region, data, self.spacing)


class RegionMasks(NamedTuple):
    """WT, TC and ET masks of one prediction."""
    wt: RegionMask
    tc: RegionMask
    et: RegionMask

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.wt.dims

    @property
    def spacing(self) -> Spacing:
        return self.wt.spacing

    def is_nested(self) -> bool:
        return bool(
            not (self.et.data & ~self.tc.data).any()
            and not (self.tc.data & ~self.wt.data).any()
        )

    @classmethod
    def empty(cls, dims: Sequence[int], spacing: Spacing) -> "RegionMasks":
        blank = np.zeros(tuple(dims), dtype=bool)
        return cls(
            RegionMask(Region.WT, blank, spacing),
            RegionMask(Region.TC, blank, spacing),
            RegionMask(Region.ET, blank, spacing),
        )


# --- Geometry ---
def voxel_to_mm(index: Sequence[int], spacing: Spacing) -> Tuple[float, float, float]:
    i, j, k = index
    return (i * spacing.sx, j * spacing.sy, k * spacing.sz)


def voxel_indices_to_mm(indices: np.ndarray, spacing: Spacing) -> np.ndarray:
    """Vectorized voxel_to_mm for an (N, 3) index array."""
    return np.asarray(indices, dtype=np.float64) * spacing.as_array()


def volume_extent_mm(dims: Sequence[int], spacing: Spacing) -> np.ndarray:
    return np.asarray(dims, dtype=np.float64) * spacing.as_array()


def volume_center_mm(dims: Sequence[int], spacing: Spacing) -> Tuple[float, float, float]:
    cx, cy, cz = volume_extent_mm(dims, spacing) / 2.0
    return (float(cx), float(cy), float(cz))


def check_same_geometry(*items) -> None:
    """Raises DimensionMismatchError unless all items share dims and spacing."""
    first = items[0]
    for item in items[1:]:
        if item.dims != first.dims:
            raise DimensionMismatchError(f"Dimension mismatch: {item.dims} vs {first.dims}")
        if item.spacing != first.spacing:
            raise DimensionMismatchError(f"Spacing mismatch: {item.spacing} vs {first.spacing}")


# --- Labels and regions ---
def check_label_values(data: np.ndarray) -> None:
    present = np.unique(data)
    invalid = np.setdiff1d(present, BRATS_LABELS)
    if invalid.size:
        raise InvalidLabelError(f"Labels outside {{0,1,2,4}}: {invalid.tolist()}")


def region_masks_from_labels(labels: LabelVolume) -> RegionMasks:
    masks = [
        RegionMask(region, np.isin(labels.data, REGION_LABELS[region]), labels.spacing)
        for region in (Region.WT, Region.TC, Region.ET)
    ]
    return RegionMasks(*masks)


def union_closure(wt: np.ndarray, tc: np.ndarray, et: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grows outer regions so that ET ⊆ TC ⊆ WT."""
    tc = tc | et
    wt = wt | tc
    return wt, tc, et


def intersection_closure(wt: np.ndarray, tc: np.ndarray, et: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shrinks inner regions so that ET ⊆ TC ⊆ WT."""
    tc = tc & wt
    et = et & tc
    return wt, tc, et


def labels_from_region_masks(wt: RegionMask, tc: RegionMask, et: RegionMask) -> LabelVolume:
    check_same_geometry(wt, tc, et)
    wt_data, tc_data, et_data = union_closure(wt.data, tc.data, et.data)

    labels = np.zeros(wt.dims, dtype=LABEL_DTYPE)
    labels[wt_data] = 2
    labels[tc_data] = 1
    labels[et_data] = 4
    return LabelVolume(labels, wt.spacing)


def nested_masks(wt: np.ndarray, tc: np.ndarray, et: np.ndarray, spacing: Spacing, closure=union_closure) -> RegionMasks:
    wt, tc, et = closure(wt, tc, et)
    return RegionMasks(
        RegionMask(Region.WT, wt, spacing),
        RegionMask(Region.TC, tc, spacing),
        RegionMask(Region.ET, et, spacing),
    )


# --- Intensities ---
def nonzero_mask(v: ScalarVolume) -> np.ndarray:
    return np.asarray(v.data) != 0


@dataclass(frozen=True, slots=True)
class NormalizationStats:
    """Mean and standard deviation of the nonzero voxels before z-scoring."""
    mean: float
    std: float

    def restore(self, data: np.ndarray) -> np.ndarray:
        """Maps z-scores back to the original intensity units; zeros stay zero."""
        data = np.asarray(data, dtype=np.float64)
        return np.where(data != 0, data * self.std + self.mean, 0.0)


def zscore_array(data: np.ndarray) -> Tuple[np.ndarray, NormalizationStats]:
    data = np.asarray(data)
    mask = data != 0
    values = data[mask].astype(np.float64)
    if values.size < 2:
        raise DegenerateVolumeError(f"Z-score needs at least 2 nonzero voxels, found {values.size}")
    mean = float(values.mean())
    std = float(values.std())
    if std == 0.0:
        raise DegenerateVolumeError("Z-score undefined for constant nonzero intensities")

    out = np.zeros(data.shape, dtype=SCALAR_DTYPE)
    scaled = ((values - mean) / std).astype(SCALAR_DTYPE)
    # a voxel sitting exactly on the mean must not turn into background
    scaled[scaled == 0] = np.finfo(SCALAR_DTYPE).tiny
    out[mask] = scaled
    return out, NormalizationStats(mean, std)


def zscore_normalize(v):
    """
    Scales the nonzero voxels of a ScalarVolume (or a scalar SphericalVolume) to
    mean 0 and standard deviation 1. Exact zeros are background and stay zero.
    """
    normalized, _ = zscore_array(v.data)
    return v.with_data(normalized)


def normalize_with_stats(v) -> Tuple[object, NormalizationStats]:
    normalized, stats = zscore_array(v.data)
    return v.with_data(normalized), stats
