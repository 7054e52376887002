"""Synthetic brain-plus-tumor phantom with analytic ground truth."""
import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import InvalidVolumeError
from .volume_core import (
    LABEL_DTYPE,
    LabelVolume,
    MultiChannelVolume,
    ScalarVolume,
    Spacing,
    volume_center_mm,
)

# Points on the WT sphere surface checked against the brain ellipsoid
SURFACE_SAMPLES: int = 4096


class PhantomSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    extent_mm: Tuple[float, float, float] = (240.0, 240.0, 155.0)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    brain_semi_axes_mm: Tuple[float, float, float] = (70.0, 85.0, 60.0)
    tissue_intensity: float = 0.3
    noise_sigma: float = Field(0.02, ge=0)

    # Tumor center in mm; None means the volume center shifted by (15, 20, 5) mm
    tumor_center_mm: Optional[Tuple[float, float, float]] = None
    radii_mm: Tuple[float, float, float] = (25.0, 15.0, 8.0)
    intensities: Tuple[float, float, float] = (0.6, 0.8, 1.0)

    n_channels: int = Field(4, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_radii(self) -> "PhantomSpec":
        wt, tc, et = self.radii_mm
        if not wt > tc > et > 0:
            raise ValueError(f"tumor radii must be strictly decreasing, got {self.radii_mm}")
        return self

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(round(e / s)) for e, s in zip(self.extent_mm, self.spacing))

    def volume_center(self) -> np.ndarray:
        return np.asarray(volume_center_mm(self.dims, Spacing.from_sequence(self.spacing)))

    def tumor_center(self) -> np.ndarray:
        if self.tumor_center_mm is not None:
            return np.asarray(self.tumor_center_mm, dtype=np.float64)
        return self.volume_center() + np.array([15.0, 20.0, 5.0])


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    angle = np.pi * (1.0 + 5 ** 0.5) * k
    return np.stack([r * np.cos(angle), r * np.sin(angle), z], axis=-1)


def _inside_ellipsoid(points: np.ndarray, center: np.ndarray, semi_axes: np.ndarray) -> np.ndarray:
    return (((points - center) / semi_axes) ** 2).sum(axis=-1) <= 1.0


def generate_phantom(spec: PhantomSpec) -> Tuple[MultiChannelVolume, LabelVolume]:
    """
    Builds the phantom channels and truth labels. Channel 0 codes the regions by
    intensity (tissue < WT < TC < ET); channels 1.. are independently noisy copies.
    Background outside the brain ellipsoid is exactly 0.
    """
    spacing = Spacing.from_sequence(spec.spacing)
    brain_center = spec.volume_center()
    tumor_center = spec.tumor_center()
    semi_axes = np.asarray(spec.brain_semi_axes_mm, dtype=np.float64)
    wt_r, tc_r, et_r = spec.radii_mm

    surface = tumor_center + wt_r * _fibonacci_sphere(SURFACE_SAMPLES)
    if not _inside_ellipsoid(surface, brain_center, semi_axes).all():
        raise InvalidVolumeError("Tumor sphere must lie inside the brain ellipsoid")

    axes = [np.arange(n) * s for n, s in zip(spec.dims, spec.spacing)]
    x, y, z = np.meshgrid(*axes, indexing="ij", sparse=True)
    brain = (
        ((x - brain_center[0]) / semi_axes[0]) ** 2
        + ((y - brain_center[1]) / semi_axes[1]) ** 2
        + ((z - brain_center[2]) / semi_axes[2]) ** 2
    ) <= 1.0
    dist = np.sqrt((x - tumor_center[0]) ** 2 + (y - tumor_center[1]) ** 2 + (z - tumor_center[2]) ** 2)

    labels = np.zeros(spec.dims, dtype=LABEL_DTYPE)
    labels[dist <= wt_r] = 2
    labels[dist <= tc_r] = 1
    labels[dist <= et_r] = 4

    coded = np.where(brain, spec.tissue_intensity, 0.0)
    coded = np.where(dist <= wt_r, spec.intensities[0], coded)
    coded = np.where(dist <= tc_r, spec.intensities[1], coded)
    coded = np.where(dist <= et_r, spec.intensities[2], coded)

    rng = np.random.default_rng(spec.seed)
    channels = []
    for _ in range(spec.n_channels):
        noise = rng.normal(0.0, spec.noise_sigma, size=spec.dims) if spec.noise_sigma > 0 else 0.0
        data = np.where(brain, coded + noise, 0.0)
        # noise must not punch background-valued holes into the brain
        data = np.where(brain & (data == 0), spec.tissue_intensity, data)
        channels.append(ScalarVolume(data.astype(np.float32), spacing))

    logging.debug(f"Phantom {spec.dims} at {spec.spacing} mm, tumor at {tumor_center.tolist()}")
    return MultiChannelVolume(tuple(channels)), LabelVolume(labels, spacing)
