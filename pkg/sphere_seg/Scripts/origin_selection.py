"""
Origin selection for the three cascade passes.

All randomness comes from one numpy Generator per call, consumed in a fixed
order, so identical inputs and seed give identical OriginSets.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import morphology
from .exceptions import EmptyVolumeError
from .schemas import SelectionConfig, SelectionRegion
from .spherical_transform import Origin
from .volume_core import (
    RegionMask,
    Spacing,
    check_same_geometry,
    voxel_indices_to_mm,
    volume_center_mm,
)


class PassId(str, Enum):
    FIRST = "first"
    SECOND = "second"
    THIRD = "third"


class SelectionMode(str, Enum):
    TRAIN = "train"
    INFER = "infer"


@dataclass(frozen=True)
class OriginSet:
    origins: Tuple[Origin, ...]
    pass_id: PassId
    seed: int
    requested: int
    fallback: Optional[str] = None

    @property
    def shortfall(self) -> int:
        """Origins requested but not found (0 when the set is complete)."""
        return max(0, self.requested - len(self.origins))

    def to_dict(self) -> dict:
        return {
            "pass": self.pass_id.value,
            "seed": self.seed,
            "requested": self.requested,
            "fallback": self.fallback,
            "origins": [list(o.as_tuple()) for o in self.origins],
        }


@dataclass
class _Picker:
    """Random picks inside shrinking candidate masks, with exclusion boxes."""
    spacing: Spacing
    cfg: SelectionConfig
    rng: np.random.Generator
    picked: List[Origin] = field(default_factory=list)

    def clear_boxes(self, candidate: np.ndarray, origins: Sequence[Origin]) -> None:
        half = self.cfg.exclusion_box_mm / 2.0
        dims = candidate.shape
        axes = [np.arange(n) * s for n, s in zip(dims, self.spacing.as_array())]
        for origin in origins:
            inside = [np.abs(ax - c) <= half for ax, c in zip(axes, origin.as_tuple())]
            candidate[np.ix_(*inside)] = False

    def pick_in(self, candidate: np.ndarray, n_needed: int) -> List[Origin]:
        """Draws up to n_needed origins from the largest remaining components."""
        found: List[Origin] = []
        while len(found) < n_needed:
            labeling = morphology.connected_components(candidate, self.spacing)
            if labeling.count == 0:
                break
            component = labeling.component(labeling.largest_id())

            interior = morphology.erode(component, self.cfg.border_erosion_iters)
            if not interior.any():
                interior = component

            choices = np.argwhere(interior)
            index = choices[int(self.rng.integers(len(choices)))]
            origin = Origin.from_sequence(voxel_indices_to_mm(index, self.spacing))
            found.append(origin)
            self.clear_boxes(candidate, [origin])
        return found

    def escalate(self, wt: np.ndarray, tc: np.ndarray, n_needed: int) -> List[Origin]:
        """Walks the escalation list (TC first, thresholds ascending) until enough origins."""
        found: List[Origin] = []
        for step in self.cfg.escalation:
            if len(found) >= n_needed:
                break
            source = tc if step.region is SelectionRegion.TC else wt
            if not source.any():
                continue

            candidate = morphology.remove_small_objects(source, step.threshold_mm3, self.spacing)
            if candidate.any():
                candidate = morphology.open(candidate, 1)
                candidate = morphology.fill_holes(candidate, self.cfg.hole_fill_mm3, self.spacing)
            self.clear_boxes(candidate, self.picked + found)

            picks = self.pick_in(candidate, n_needed - len(found))
            if picks:
                logging.debug(f"{len(picks)} origin(s) from {step.region.value} >= {step.threshold_mm3} mm³")
            found.extend(picks)
        self.picked.extend(found)
        return found


def _volume_center(dims: Sequence[int], spacing: Spacing) -> Origin:
    return Origin.from_sequence(volume_center_mm(dims, spacing))


def _fallback(wt: np.ndarray, spacing: Spacing) -> Tuple[Origin, str]:
    """Centroid of the largest WT component, else the volume center."""
    labeling = morphology.connected_components(wt, spacing)
    if labeling.count:
        centroid = morphology.object_centroids(labeling, spacing)[0]
        return Origin.from_sequence(centroid), "wt_centroid"
    return _volume_center(wt.shape, spacing), "volume_center"


def first_pass_origins(
    brain_mask,
    spacing: Spacing,
    cfg: SelectionConfig,
    mode: str = SelectionMode.INFER,
    seed: Optional[int] = None,
) -> OriginSet:
    """
    Inference: the volume center. Training: the center plus n_origins uniform picks
    among the nonzero voxels.
    """
    mode = SelectionMode(mode)
    seed = cfg.rng_seed if seed is None else seed
    brain_mask = np.asarray(brain_mask, dtype=bool)
    center = _volume_center(brain_mask.shape, spacing)

    if mode is SelectionMode.INFER:
        return OriginSet((center,), PassId.FIRST, seed, requested=1)

    candidates = np.argwhere(brain_mask)
    if candidates.size == 0:
        raise EmptyVolumeError("Training-mode origin selection needs a non-empty brain mask")
    rng = np.random.default_rng(seed)
    picks = candidates[rng.integers(len(candidates), size=cfg.n_origins)]
    origins = [center] + [Origin.from_sequence(p) for p in voxel_indices_to_mm(picks, spacing)]
    return OriginSet(tuple(origins), PassId.FIRST, seed, requested=cfg.n_origins + 1)


def second_pass_origins(
    wt: RegionMask,
    tc: RegionMask,
    spacing: Spacing,
    cfg: SelectionConfig,
    seed: Optional[int] = None,
) -> OriginSet:
    """Random origins inside the largest tumor objects, spread by exclusion boxes."""
    check_same_geometry(wt, tc)
    seed = cfg.rng_seed if seed is None else seed
    picker = _Picker(spacing, cfg, np.random.default_rng(seed))

    origins = picker.escalate(np.asarray(wt.data), np.asarray(tc.data), cfg.n_origins)
    fallback = None
    if not origins:
        origin, fallback = _fallback(np.asarray(wt.data), spacing)
        origins = [origin]
        logging.warning(f"⚠️ Second pass found no candidate object, falling back to {fallback}")
    elif len(origins) < cfg.n_origins:
        logging.info(f"Second pass found {len(origins)} of {cfg.n_origins} origins")

    return OriginSet(tuple(origins), PassId.SECOND, seed, requested=cfg.n_origins, fallback=fallback)


def third_pass_origins(
    wt: RegionMask,
    tc: RegionMask,
    spacing: Spacing,
    cfg: SelectionConfig,
    seed: Optional[int] = None,
) -> OriginSet:
    """
    Centroids of the WT objects (largest first). When an object spans more than
    large_object_mm along any axis, free slots are topped up with randomized picks
    inside that object, as in the second pass.
    """
    check_same_geometry(wt, tc)
    seed = cfg.rng_seed if seed is None else seed
    wt_data = np.asarray(wt.data)
    tc_data = np.asarray(tc.data)

    labeling = morphology.connected_components(wt_data, spacing)
    if labeling.count == 0:
        origin, fallback = _fallback(wt_data, spacing)
        logging.warning(f"⚠️ Third pass found no WT object, falling back to {fallback}")
        return OriginSet((origin,), PassId.THIRD, seed, requested=cfg.n_origins, fallback=fallback)

    ids = labeling.ids_by_volume()
    kept = [i for i in ids if labeling.volumes_mm3[i - 1] >= cfg.min_component_mm3] or ids[:1]
    centroids = morphology.object_centroids(labeling, spacing)
    centroid_of = dict(zip(ids, centroids))
    origins = [Origin.from_sequence(centroid_of[i]) for i in kept[: cfg.n_origins]]

    picker = _Picker(spacing, cfg, np.random.default_rng(seed), picked=list(origins))
    for component_id in kept:
        if len(origins) >= cfg.n_origins:
            break
        component = labeling.component(component_id)
        extent = morphology.bounding_box_mm(component, spacing)
        if max(extent) <= cfg.large_object_mm:
            continue
        logging.debug(f"Object {component_id} spans {extent} mm, adding randomized origins")
        origins.extend(picker.escalate(component, tc_data & component, cfg.n_origins - len(origins)))

    return OriginSet(tuple(origins[: cfg.n_origins]), PassId.THIRD, seed, requested=cfg.n_origins)


def training_origin_sets(
    brain_mask,
    wt: RegionMask,
    tc: RegionMask,
    spacing: Spacing,
    cfg: SelectionConfig,
    n_draws: int,
) -> List[Tuple[OriginSet, OriginSet]]:
    """Independently seeded (first, second) pass origin sets for augmentation draws."""
    seeds = np.random.SeedSequence(cfg.rng_seed).generate_state(n_draws)
    return [
        (
            first_pass_origins(brain_mask, spacing, cfg, SelectionMode.TRAIN, seed=int(s)),
            second_pass_origins(wt, tc, spacing, cfg, seed=int(s)),
        )
        for s in seeds
    ]
