"""
Cascade orchestration: per-origin spherical segmentation, ensemble merging,
Cartesian-filter intersection and post-processing.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from . import morphology
from .config import LOG_FORMAT
from .exceptions import DimensionMismatchError, PassFailedError, SphereSegError
from .origin_selection import (
    OriginSet,
    PassId,
    SelectionMode,
    first_pass_origins,
    second_pass_origins,
    third_pass_origins,
)
from .schemas import GridConfig, PipelineConfig, PostprocessConfig, SegmenterSpec
from .segmenter import SegmenterInput, segment
from .spherical_transform import (
    Interpolation,
    Origin,
    build_grid,
    forward_transform,
    inverse_project_labels,
)
from .volume_core import (
    LabelVolume,
    MultiChannelVolume,
    RegionMasks,
    check_same_geometry,
    intersection_closure,
    labels_from_region_masks,
    nested_masks,
    normalize_with_stats,
    region_masks_from_labels,
    union_closure,
)

PASS_SEED_STRIDE: int = 1000
# exchange meta "pass" index of the Cartesian segmenter; spherical passes are 1..3
CARTESIAN_PASS_INDEX: int = 0


@dataclass(frozen=True)
class OriginOutcome:
    origin: Origin
    masks: Optional[RegionMasks] = None
    r_max: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.masks is not None


@dataclass(frozen=True)
class PassResult:
    pass_id: PassId
    origins: OriginSet
    outcomes: Tuple[OriginOutcome, ...]
    merged: RegionMasks
    warnings: Tuple[str, ...] = ()

    @property
    def per_origin_masks(self) -> List[RegionMasks]:
        return [o.masks for o in self.outcomes if o.ok]


class PassSummary(BaseModel):
    pass_id: str
    origins: List[List[float]]
    origins_requested: int
    origins_succeeded: int
    origin_fallback: Optional[str] = None
    wt_components: int
    wt_volume_mm3: float
    tc_volume_mm3: float
    et_volume_mm3: float
    warnings: List[str] = []


class ReportSummary(BaseModel):
    """Deterministic part of a PipelineReport (no wall-clock values)."""
    passes: List[PassSummary]
    cartesian_filter: bool
    final_wt_volume_mm3: float
    final_tc_volume_mm3: float
    final_et_volume_mm3: float
    warnings: List[str] = []


@dataclass
class PipelineReport:
    passes: List[PassResult]
    final_labels: LabelVolume
    final_masks: RegionMasks
    cartesian_wt: Optional[np.ndarray] = None
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def summary(self) -> ReportSummary:
        return ReportSummary(
            passes=[summarize_pass(p) for p in self.passes],
            cartesian_filter=self.cartesian_wt is not None,
            final_wt_volume_mm3=self.final_masks.wt.volume_mm3,
            final_tc_volume_mm3=self.final_masks.tc.volume_mm3,
            final_et_volume_mm3=self.final_masks.et.volume_mm3,
            warnings=list(self.warnings),
        )


def summarize_pass(result: PassResult) -> PassSummary:
    merged = result.merged
    components = morphology.connected_components(merged.wt.data, merged.spacing).count
    return PassSummary(
        pass_id=result.pass_id.value,
        origins=[list(o.as_tuple()) for o in result.origins.origins],
        origins_requested=result.origins.requested,
        origins_succeeded=sum(o.ok for o in result.outcomes),
        origin_fallback=result.origins.fallback,
        wt_components=components,
        wt_volume_mm3=merged.wt.volume_mm3,
        tc_volume_mm3=merged.tc.volume_mm3,
        et_volume_mm3=merged.et.volume_mm3,
        warnings=list(result.warnings),
    )


# --- Mask algebra ---
def merge_ensemble(per_origin_masks: Sequence[RegionMasks]) -> RegionMasks:
    """Voxelwise union per region, then union-closure; order does not matter."""
    if not per_origin_masks:
        raise ValueError("merge_ensemble needs at least one prediction")
    first = per_origin_masks[0]
    for masks in per_origin_masks[1:]:
        check_same_geometry(first.wt, masks.wt)

    wt = np.logical_or.reduce([np.asarray(m.wt.data) for m in per_origin_masks])
    tc = np.logical_or.reduce([np.asarray(m.tc.data) for m in per_origin_masks])
    et = np.logical_or.reduce([np.asarray(m.et.data) for m in per_origin_masks])
    return nested_masks(wt, tc, et, first.spacing, closure=union_closure)


def apply_cartesian_filter(spherical_masks: RegionMasks, cartesian_wt) -> RegionMasks:
    """Keeps only the spherical predictions inside the Cartesian WT mask."""
    keep = np.asarray(getattr(cartesian_wt, "data", cartesian_wt), dtype=bool)
    if keep.shape != spherical_masks.dims:
        raise DimensionMismatchError(f"Filter dims {keep.shape} vs masks {spherical_masks.dims}")
    return RegionMasks(*(m.with_data(np.asarray(m.data) & keep) for m in spherical_masks))


def postprocess(masks: RegionMasks, cfg: PostprocessConfig) -> RegionMasks:
    """Opening then small-object removal per region, then intersection-closure."""
    spacing = masks.spacing
    cleaned = []
    for mask in masks:
        data = np.asarray(mask.data)
        if data.any():
            data = morphology.open(data, cfg.open_iters)
            data = morphology.remove_small_objects(data, cfg.min_object_mm3, spacing)
        cleaned.append(data)
    return nested_masks(*cleaned, spacing, closure=intersection_closure)


# --- One pass ---
def _segment_origin(
    volume: MultiChannelVolume,
    origin: Origin,
    spec: SegmenterSpec,
    grid_cfg: GridConfig,
    pass_index: int,
    threads: int,
) -> OriginOutcome:
    grid = build_grid(volume.channels[0], origin, grid_cfg.n_r, grid_cfg.n_theta, grid_cfg.n_phi, grid_cfg.r_max_mode)

    # transform first, then normalize in the spherical domain
    channels, stats = [], []
    for channel in volume.channels:
        spherical = forward_transform(channel, grid, Interpolation.TRILINEAR, threads=threads)
        normalized, channel_stats = normalize_with_stats(spherical)
        channels.append(normalized)
        stats.append(channel_stats)

    meta = {"pass": pass_index, "origin": list(origin.as_tuple()), "grid": grid.to_dict()}
    item = SegmenterInput.from_spherical(channels, volume.names, stats, meta)
    predicted = segment(spec, item, grid=grid)

    labels = inverse_project_labels(predicted, volume.dims, volume.spacing, threads=threads)
    return OriginOutcome(origin, region_masks_from_labels(labels), grid.r_max)


def run_pass(
    volume: MultiChannelVolume,
    origins: OriginSet,
    spec: SegmenterSpec,
    grid_cfg: GridConfig,
    parallelism: int = 1,
    threads: int = 1,
) -> PassResult:
    """
    Segments the volume once per origin and merges the back-projected masks. Origins
    that fail are reported as warnings; the pass fails only if all of them do.
    """
    if not origins.origins:
        raise ValueError("run_pass needs at least one origin")
    pass_index = list(PassId).index(origins.pass_id) + 1

    def work(origin: Origin) -> OriginOutcome:
        try:
            return _segment_origin(volume, origin, spec, grid_cfg, pass_index, threads)
        except SphereSegError as e:
            return OriginOutcome(origin, error=f"{type(e).__name__}: {e}")

    if parallelism > 1 and len(origins.origins) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(work, origins.origins))
    else:
        outcomes = [work(o) for o in origins.origins]

    warnings = []
    for outcome in outcomes:
        if not outcome.ok:
            message = f"pass {pass_index} origin {outcome.origin.as_tuple()} failed: {outcome.error}"
            logging.warning(f"⚠️ {message}")
            warnings.append(message)

    survivors = [o.masks for o in outcomes if o.ok]
    if not survivors:
        raise PassFailedError(f"Every origin of pass {pass_index} failed: {[o.error for o in outcomes]}")

    return PassResult(origins.pass_id, origins, tuple(outcomes), merge_ensemble(survivors), tuple(warnings))


# --- Cascade ---
class CascadePipeline:
    """Runs the three spherical passes, the optional Cartesian filter and post-processing."""

    def __init__(self, cfg: PipelineConfig, threads: Optional[int] = None) -> None:
        self.cfg = cfg
        self.threads = threads or 1
        self.parallelism = cfg.parallelism
        self._setup_logging()

    def _setup_logging(self) -> None:
        """Falls back to the project format when the caller configured nothing."""
        if not logging.getLogger().handlers:
            logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)

    def _pass_seed(self, pass_index: int) -> int:
        return self.cfg.rng_seed + PASS_SEED_STRIDE * pass_index

    def _timed_pass(self, volume, origins: OriginSet, pass_index: int, stage_seconds: Dict[str, float]) -> PassResult:
        started = time.perf_counter()
        logging.info(f"🔄 Pass {pass_index}: {len(origins.origins)} origin(s)")
        result = run_pass(
            volume,
            origins,
            self.cfg.segmenters.for_pass(pass_index),
            self.cfg.grid,
            parallelism=self.parallelism,
            threads=self.threads,
        )
        stage_seconds[f"pass{pass_index}"] = time.perf_counter() - started
        logging.info(f"✅ Pass {pass_index}: WT {result.merged.wt.volume_mm3:.0f} mm³")
        return result

    def cartesian_wt(self, volume: MultiChannelVolume) -> np.ndarray:
        """WT mask from the Cartesian segmenter on the z-scored, untransformed volume."""
        channels, stats = [], []
        for channel in volume.channels:
            normalized, channel_stats = normalize_with_stats(channel)
            channels.append(normalized)
            stats.append(channel_stats)
        normalized_volume = MultiChannelVolume(tuple(channels), volume.names)
        item = SegmenterInput.from_volume(normalized_volume, stats=stats, meta={"pass": CARTESIAN_PASS_INDEX})
        labels = segment(self.cfg.segmenters.cartesian, item)
        return np.asarray(region_masks_from_labels(labels).wt.data)

    def run(self, volume: MultiChannelVolume) -> PipelineReport:
        stage_seconds: Dict[str, float] = {}
        brain = np.logical_or.reduce([np.asarray(c.data) != 0 for c in volume.channels])
        if not brain.any():
            message = "input volume is empty; r_max falls back to corners and no tumor can be found"
            logging.warning(f"⚠️ {message}")
            empty = RegionMasks.empty(volume.dims, volume.spacing)
            return PipelineReport([], LabelVolume.empty(volume.dims, volume.spacing), empty, warnings=[message])

        selection = self.cfg.selection
        spacing = volume.spacing
        cleanup = self.cfg.postprocess

        first = first_pass_origins(brain, spacing, selection, SelectionMode.INFER, seed=self._pass_seed(1))
        pass1 = self._timed_pass(volume, first, 1, stage_seconds)

        filtered = postprocess(pass1.merged, cleanup)
        second = second_pass_origins(filtered.wt, filtered.tc, spacing, selection, seed=self._pass_seed(2))
        pass2 = self._timed_pass(volume, second, 2, stage_seconds)

        filtered = postprocess(pass2.merged, cleanup)
        third = third_pass_origins(filtered.wt, filtered.tc, spacing, selection, seed=self._pass_seed(3))
        pass3 = self._timed_pass(volume, third, 3, stage_seconds)

        masks = pass3.merged
        cartesian_wt = None
        if self.cfg.enable_cartesian_filter:
            started = time.perf_counter()
            cartesian_wt = self.cartesian_wt(volume)
            masks = apply_cartesian_filter(masks, cartesian_wt)
            stage_seconds["cartesian"] = time.perf_counter() - started

        started = time.perf_counter()
        final = postprocess(masks, cleanup)
        labels = labels_from_region_masks(*final)
        stage_seconds["postprocess"] = time.perf_counter() - started

        warnings = [w for p in (pass1, pass2, pass3) for w in p.warnings]
        return PipelineReport([pass1, pass2, pass3], labels, final, cartesian_wt, stage_seconds, warnings)


def run_cascade(volume: MultiChannelVolume, cfg: PipelineConfig, threads: Optional[int] = None) -> PipelineReport:
    return CascadePipeline(cfg, threads).run(volume)
