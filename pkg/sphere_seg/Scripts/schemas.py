import json
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import settings
from .exceptions import ConfigError


class StrictModel(BaseModel):
    """Config documents reject unknown keys so typos fail fast."""
    model_config = ConfigDict(extra="forbid")


# --- Spherical grid ---
class GridConfig(StrictModel):
    n_r: int = Field(settings.PROJECT.DEFAULT_N_R, ge=2)
    n_theta: int = Field(settings.PROJECT.DEFAULT_N_THETA, ge=4)
    n_phi: int = Field(settings.PROJECT.DEFAULT_N_PHI, ge=2)
    r_max_mode: Literal["surface", "corners"] = "surface"


# --- Origin selection ---
class SelectionRegion(str, Enum):
    TC = "TC"
    WT = "WT"


class EscalationStep(StrictModel):
    region: SelectionRegion
    threshold_mm3: float = Field(ge=0)


DEFAULT_ESCALATION: List[Tuple[str, float]] = [
    ("TC", 30.0), ("TC", 100.0), ("TC", 1000.0),
    ("WT", 30.0), ("WT", 100.0), ("WT", 1000.0),
]


class SelectionConfig(StrictModel):
    n_origins: int = Field(4, ge=1)
    exclusion_box_mm: float = Field(50.0, gt=0)
    border_erosion_iters: int = Field(2, ge=0)
    escalation: List[EscalationStep] = Field(
        default_factory=lambda: [EscalationStep(region=r, threshold_mm3=t) for r, t in DEFAULT_ESCALATION]
    )
    large_object_mm: float = Field(50.0, gt=0)
    hole_fill_mm3: float = Field(30.0, ge=0)
    min_component_mm3: float = Field(30.0, ge=0)
    rng_seed: int = 0

    @field_validator("escalation")
    @classmethod
    def _non_empty(cls, value: List[EscalationStep]) -> List[EscalationStep]:
        if not value:
            raise ValueError("escalation must list at least one (region, threshold) step")
        return value


# --- Segmenters ---
class SegmenterSpec(StrictModel):
    kind: Literal["threshold_oracle", "external_command"] = "threshold_oracle"

    # threshold oracle, channel 0, phantom intensity units
    t_wt: float = 0.45
    t_tc: float = 0.70
    t_et: float = 0.90

    # external command
    command: List[str] = Field(default_factory=list)
    workdir_policy: Literal["temp", "keep"] = "temp"
    workdir_root: Optional[str] = None
    timeout_s: float = Field(600.0, gt=0)
    output_filename: str = settings.PROJECT.EXCHANGE_OUTPUT

    @model_validator(mode="after")
    def _check_kind(self) -> "SegmenterSpec":
        if self.kind == "threshold_oracle" and not (self.t_wt < self.t_tc < self.t_et):
            raise ValueError("oracle thresholds must satisfy t_wt < t_tc < t_et")
        if self.kind == "external_command" and not self.command:
            raise ValueError("external_command segmenter needs a command")
        return self


class PassSegmenters(StrictModel):
    """One segmenter per cascade stage; pass2/pass3 reuse pass1 when unset."""
    pass1: SegmenterSpec = Field(default_factory=SegmenterSpec)
    pass2: Optional[SegmenterSpec] = None
    pass3: Optional[SegmenterSpec] = None
    cartesian: Optional[SegmenterSpec] = None

    def for_pass(self, pass_index: int) -> SegmenterSpec:
        chosen = {1: self.pass1, 2: self.pass2, 3: self.pass3}[pass_index]
        return chosen or self.pass1


class PostprocessConfig(StrictModel):
    min_object_mm3: float = Field(30.0, ge=0)
    open_iters: int = Field(1, ge=1)


class PipelineConfig(StrictModel):
    grid: GridConfig = Field(default_factory=GridConfig)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    segmenters: PassSegmenters = Field(default_factory=PassSegmenters)
    postprocess: PostprocessConfig = Field(default_factory=PostprocessConfig)
    enable_cartesian_filter: bool = False
    rng_seed: int = 0
    parallelism: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_filter(self) -> "PipelineConfig":
        if self.enable_cartesian_filter and self.segmenters.cartesian is None:
            raise ValueError("enable_cartesian_filter needs a 'cartesian' segmenter")
        return self


def load_pipeline_config(path: str) -> PipelineConfig:
    """Reads a JSON pipeline config; the seed must be spelled out in the file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e

    if not isinstance(payload, dict) or "rng_seed" not in payload:
        raise ConfigError(f"Config {path} must be a JSON object with an explicit 'rng_seed'")
    return parse_pipeline_config(payload)


def parse_pipeline_config(payload: Dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"Invalid pipeline config: {e}") from e
