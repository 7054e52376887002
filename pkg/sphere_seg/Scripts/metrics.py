"""
BraTS-style evaluation per region: Dice, sensitivity, specificity and HD95 (mm).

Undefined values (sensitivity with an empty truth, specificity with a full-volume
truth, HD95 with an empty surface) are reported as None, which becomes an empty cell
in CSV output.
"""
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy import ndimage
from scipy.spatial import cKDTree

from .volume_core import LabelVolume, Region, RegionMask, check_same_geometry, region_masks_from_labels

METRIC_COLUMNS: List[str] = ["case_id", "region", "dice", "sensitivity", "specificity", "hd95"]

# Surface voxels are foreground voxels with a background 6-neighbour
_SURFACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)


class RegionScores(BaseModel):
    dice: float = Field(ge=0, le=1)
    sensitivity: Optional[float] = Field(None, ge=0, le=1)
    specificity: Optional[float] = Field(None, ge=0, le=1)
    hd95: Optional[float] = Field(None, ge=0)


class CaseMetrics(BaseModel):
    case_id: str = "case"
    WT: RegionScores
    TC: RegionScores
    ET: RegionScores

    def rows(self) -> List[dict]:
        return [
            {"case_id": self.case_id, "region": region.value, **getattr(self, region.value).model_dump()}
            for region in Region
        ]


def _pair(pred: RegionMask, truth: RegionMask):
    check_same_geometry(pred, truth)
    return np.asarray(pred.data, dtype=bool), np.asarray(truth.data, dtype=bool)


def dice(pred: RegionMask, truth: RegionMask) -> float:
    p, t = _pair(pred, truth)
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / total


def sensitivity(pred: RegionMask, truth: RegionMask) -> Optional[float]:
    p, t = _pair(pred, truth)
    positives = int(t.sum())
    if positives == 0:
        return None
    return int((p & t).sum()) / positives


def specificity(pred: RegionMask, truth: RegionMask) -> Optional[float]:
    p, t = _pair(pred, truth)
    negatives = int((~t).sum())
    if negatives == 0:
        return None
    return int((~p & ~t).sum()) / negatives


def surface_points_mm(mask: np.ndarray, spacing) -> np.ndarray:
    """Centers (mm) of the foreground voxels touching background; outside counts as background."""
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=_SURFACE_STRUCTURE, border_value=0)
    return np.argwhere(mask & ~interior) * spacing.as_array()


def hausdorff95(pred: RegionMask, truth: RegionMask, spacing=None) -> Optional[float]:
    """
    Symmetric 95th-percentile Hausdorff distance between the two surfaces, using
    linear interpolation between order statistics.
    """
    p, t = _pair(pred, truth)
    spacing = spacing or pred.spacing
    if np.array_equal(p, t) and p.any():
        return 0.0

    p_surface = surface_points_mm(p, spacing)
    t_surface = surface_points_mm(t, spacing)
    if len(p_surface) == 0 or len(t_surface) == 0:
        return None

    p_to_t, _ = cKDTree(t_surface).query(p_surface, k=1)
    t_to_p, _ = cKDTree(p_surface).query(t_surface, k=1)
    return float(max(np.percentile(p_to_t, 95), np.percentile(t_to_p, 95)))


def region_scores(pred: RegionMask, truth: RegionMask) -> RegionScores:
    return RegionScores(
        dice=dice(pred, truth),
        sensitivity=sensitivity(pred, truth),
        specificity=specificity(pred, truth),
        hd95=hausdorff95(pred, truth),
    )


def evaluate_case(pred: LabelVolume, truth: LabelVolume, case_id: str = "case") -> CaseMetrics:
    check_same_geometry(pred, truth)
    pred_masks = region_masks_from_labels(pred)
    truth_masks = region_masks_from_labels(truth)
    scores = {
        region.value: region_scores(getattr(pred_masks, region.name.lower()), getattr(truth_masks, region.name.lower()))
        for region in Region
    }
    return CaseMetrics(case_id=case_id, **scores)


# --- Reporting ---
def to_frame(cases: Iterable[CaseMetrics]) -> pd.DataFrame:
    rows = [row for case in cases for row in case.rows()]
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def write_metrics_csv(cases: Iterable[CaseMetrics], path: str) -> None:
    to_frame(cases).to_csv(path, index=False, float_format="%.6f")


def format_table(cases: Iterable[CaseMetrics]) -> str:
    frame = to_frame(cases)
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="n/a")
