"""
Segmenter interface: anything that maps a multichannel volume (Cartesian or
spherical domain) to BraTS labels.

Two implementations ship: a threshold oracle on channel 0, used with phantoms, and
an adapter around an external command that exchanges SVOL files through a working
directory:

    input_ch{0..C-1}.svol   scalar channels
    meta.json               pass index (1..3, 0 for the Cartesian segmenter), domain,
                            origin, grid, channel names, normalization stats
    pred.svol               label volume written by the command

The command is invoked with the directory path as its sole extra argument and must
exit with status 0.
"""
import json
import logging
import os
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .config import settings
from .exceptions import (
    InputError,
    SegmenterDimensionError,
    SegmenterOutputError,
    SegmenterProcessError,
    SegmenterTimeoutError,
)
from .io_formats import encode_svol, read_svol_array
from .schemas import SegmenterSpec
from .spherical_transform import SphericalVolume
from .volume_core import (
    BRATS_LABELS,
    LABEL_DTYPE,
    LabelVolume,
    MultiChannelVolume,
    NormalizationStats,
    Spacing,
)

DOMAIN_CARTESIAN: str = "cartesian"
DOMAIN_SPHERICAL: str = "spherical"


@dataclass(frozen=True)
class SegmenterInput:
    """Channels handed to a segmenter, plus what it may need to interpret them."""
    channels: Sequence[np.ndarray]
    spacing: Spacing
    domain: str = DOMAIN_CARTESIAN
    names: Sequence[str] = ()
    stats: Optional[Sequence[NormalizationStats]] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.channels:
            raise InputError("Segmenter input needs at least one channel")
        shape = np.shape(self.channels[0])
        if any(np.shape(c) != shape for c in self.channels):
            raise InputError("Segmenter input channels must share dims")

    @property
    def shape(self):
        return tuple(np.shape(self.channels[0]))

    @classmethod
    def from_volume(cls, volume: MultiChannelVolume, **kwargs) -> "SegmenterInput":
        return cls([c.data for c in volume.channels], volume.spacing, DOMAIN_CARTESIAN, volume.names, **kwargs)

    @classmethod
    def from_spherical(
        cls,
        channels: Sequence[SphericalVolume],
        names: Sequence[str] = (),
        stats: Optional[Sequence[NormalizationStats]] = None,
        meta: Optional[Dict[str, Any]] = None,
    ) -> "SegmenterInput":
        return cls(
            [c.data for c in channels], channels[0].spacing, DOMAIN_SPHERICAL, names, stats, meta or {}
        )


def validate_prediction(labels: np.ndarray, expected_shape: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != tuple(expected_shape):
        raise SegmenterDimensionError(f"Prediction dims {labels.shape} do not match input {tuple(expected_shape)}")
    invalid = np.setdiff1d(np.unique(labels), BRATS_LABELS)
    if invalid.size:
        raise SegmenterOutputError(f"Prediction holds labels outside {{0,1,2,4}}: {invalid.tolist()}")
    return labels.astype(LABEL_DTYPE)


class ThresholdOracle:
    """Label 2 above t_wt, 1 above t_tc, 4 above t_et, on channel 0."""

    def __init__(self, spec: SegmenterSpec) -> None:
        self.spec = spec

    def predict(self, item: SegmenterInput) -> np.ndarray:
        values = np.asarray(item.channels[0], dtype=np.float64)
        if item.stats is not None:
            values = item.stats[0].restore(values)

        labels = np.zeros(values.shape, dtype=LABEL_DTYPE)
        labels[values > self.spec.t_wt] = 2
        labels[values > self.spec.t_tc] = 1
        labels[values > self.spec.t_et] = 4
        return labels


class ExternalCommandSegmenter:
    """Runs a model as a subprocess over an SVOL exchange directory."""

    def __init__(self, spec: SegmenterSpec) -> None:
        self.spec = spec

    def _make_workdir(self) -> str:
        root = self.spec.workdir_root
        if root:
            os.makedirs(root, exist_ok=True)
        return tempfile.mkdtemp(prefix="sphereseg_", dir=root)

    def write_exchange(self, item: SegmenterInput, workdir: str) -> None:
        for index, channel in enumerate(item.channels):
            name = settings.PROJECT.EXCHANGE_INPUT_PATTERN.format(index=index)
            with open(os.path.join(workdir, name), "wb") as f:
                f.write(encode_svol(channel, item.spacing, is_label=False))

        meta = dict(item.meta)
        meta["domain"] = item.domain
        meta["channel_names"] = list(item.names)
        meta["shape"] = list(item.shape)
        if item.stats is not None:
            meta["normalization"] = [{"mean": s.mean, "std": s.std} for s in item.stats]
        with open(os.path.join(workdir, settings.PROJECT.EXCHANGE_META), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, sort_keys=True)

    def run_command(self, workdir: str) -> None:
        command = list(self.spec.command) + [workdir]
        logging.debug(f"Running segmenter: {command}")
        try:
            result = subprocess.run(command, capture_output=True, text=True, timeout=self.spec.timeout_s)
        except subprocess.TimeoutExpired as e:
            raise SegmenterTimeoutError(f"Segmenter timed out after {self.spec.timeout_s}s: {command}") from e
        except OSError as e:
            raise SegmenterProcessError(f"Cannot start segmenter {command}: {e}") from e

        if result.returncode != 0:
            raise SegmenterProcessError(
                f"Segmenter exited with status {result.returncode}: {result.stderr.strip()[-500:]}",
                returncode=result.returncode,
                stderr=result.stderr,
            )

    def read_prediction(self, workdir: str, expected_shape: Sequence[int]) -> np.ndarray:
        path = os.path.join(workdir, self.spec.output_filename)
        if not os.path.isfile(path):
            raise SegmenterOutputError(f"Segmenter wrote no {self.spec.output_filename}")
        try:
            data, _, is_label = read_svol_array(path)
        except InputError as e:
            raise SegmenterOutputError(f"Unreadable prediction {path}: {e}") from e
        if not is_label:
            raise SegmenterOutputError(f"Prediction {path} is not a label volume")
        return validate_prediction(data, expected_shape)

    def predict(self, item: SegmenterInput) -> np.ndarray:
        workdir = self._make_workdir()
        try:
            self.write_exchange(item, workdir)
            self.run_command(workdir)
            return self.read_prediction(workdir, item.shape)
        finally:
            if self.spec.workdir_policy == "temp":
                shutil.rmtree(workdir, ignore_errors=True)
            else:
                logging.info(f"Segmenter exchange kept in {workdir}")


def build_segmenter(spec: SegmenterSpec):
    if spec.kind == "threshold_oracle":
        return ThresholdOracle(spec)
    return ExternalCommandSegmenter(spec)


def segment(spec: SegmenterSpec, item: SegmenterInput, grid=None):
    """
    Runs the configured segmenter. Cartesian inputs come back as a LabelVolume;
    spherical inputs as a label SphericalVolume on `grid`.
    """
    labels = validate_prediction(build_segmenter(spec).predict(item), item.shape)
    if item.domain == DOMAIN_SPHERICAL:
        if grid is None:
            raise InputError("Spherical segmentation needs the grid of its input")
        return SphericalVolume(grid, labels, is_label=True)
    return LabelVolume(labels, item.spacing)
