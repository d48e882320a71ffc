"""
Pydantic models for command configs, calibration artifacts and the report schema.
Every ``--config <json>`` file is validated against one of these models.
"""

from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from uqlib.calibration import T_MAX, T_MIN
from uqlib.conformal import DEFAULT_ALPHA
from uqlib.explain import FillMode, LimeConfig
from uqlib.metrics import DEFAULT_BINS
from uqlib.selective import ConfidenceSource

TOOL_VERSION = "0.1.0"
REPORT_SCHEMA_VERSION = "1.0"
OUT_OF_SCOPE = "out_of_scope"


class ScoreKind(str, Enum):
    """What a score tensor holds."""
    PROBABILITIES = "probabilities"
    LOGITS = "logits"
    PASSES = "passes"


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthConfig(_Config):
    """Synthetic fixture generator settings."""
    n_samples: int = Field(2000, ge=20, description="Number of manifest rows (N)")
    num_classes: int = Field(6, ge=2, le=64, description="Number of classes (K)")
    num_passes: int = Field(10, ge=1, description="Stochastic passes per sample (T)")
    miscalibration: float = Field(2.0, gt=0, description="Observed logits are c * true logits")
    logit_scale: float = Field(1.5, gt=0, description="Std of the true logits")
    pass_noise: float = Field(0.5, ge=0, description="Std of per-pass logit noise")
    calibration_fraction: float = Field(0.5, gt=0, lt=1)
    vendors: List[str] = Field(default_factory=lambda: ["vendor_a", "vendor_b", "vendor_c"])
    image_size: int = Field(32, ge=4, le=512, description="Side length of the square images")
    cell: int = Field(8, ge=1, description="Grid superpixel side length")
    images_per_class: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SynthConfig":
        if not self.vendors or len(set(self.vendors)) != len(self.vendors):
            raise ValueError("vendors must be a non-empty list of distinct names")
        if self.cell > self.image_size:
            raise ValueError(f"cell {self.cell} larger than image size {self.image_size}")
        return self


class CalibrateConfig(_Config):
    t_min: float = Field(T_MIN, gt=0)
    t_max: float = Field(T_MAX, gt=1)
    bins: int = Field(DEFAULT_BINS, ge=1)


class ReportConfig(_Config):
    """Settings shared by report, conformal and select."""
    alpha: float = Field(DEFAULT_ALPHA, gt=0, lt=1, description="Conformal miscoverage level")
    randomized: bool = Field(False, description="Randomized APS sets (needs the seed)")
    target_risk: float = Field(0.05, ge=0, le=1)
    threshold: Optional[float] = Field(None, description="Fixed confidence threshold; overrides target_risk")
    confidence_source: ConfidenceSource = ConfidenceSource.MAX_PROBABILITY
    group_by: Optional[str] = Field(None, description="Manifest column to stratify on")
    bins: int = Field(DEFAULT_BINS, ge=1)
    min_support: int = Field(20, ge=1)
    n_examples: int = Field(3, ge=0, description="Example cases listed per category")

    @model_validator(mode="after")
    def _no_evidential(self) -> "ReportConfig":
        if self.confidence_source is ConfidenceSource.EVIDENTIAL:
            raise ValueError("evidential confidence needs Dirichlet outputs; not available from score files")
        return self


class LimeSettings(_Config):
    n_samples: int = Field(1000, ge=2)
    kernel_width: float = Field(0.25, gt=0)
    ridge_lambda: float = Field(1.0, ge=0)
    fill: FillMode = FillMode.MEAN
    n_repeats: int = Field(10, ge=2)
    max_workers: int = Field(1, ge=1)

    def to_config(self, seed: int) -> LimeConfig:
        return LimeConfig(
            n_samples=self.n_samples,
            kernel_width=self.kernel_width,
            ridge_lambda=self.ridge_lambda,
            fill=self.fill,
            seed=seed,
            max_workers=self.max_workers,
        )


class ExplainConfig(_Config):
    image_index: int = Field(0, ge=0)
    class_index: Optional[int] = Field(None, ge=0, description="Explained class; oracle argmax if omitted")
    cell: int = Field(8, ge=1, description="Grid cell when no segmentation file is given")
    u_tilde: Optional[float] = Field(None, ge=0, le=1)
    lime: LimeSettings = Field(default_factory=LimeSettings)


class Provenance(BaseModel):
    """Content-addressed run record; carries no wall-clock time."""
    tool_version: str
    command: str
    seed: Optional[int] = None
    config_hash: str
    config: Dict[str, Any] = Field(default_factory=dict)
    input_digests: Dict[str, str] = Field(default_factory=dict)


class CalibrationArtifact(BaseModel):
    schema_version: str = REPORT_SCHEMA_VERSION
    method: Literal["temperature_scaling"] = "temperature_scaling"
    temperature: float = Field(..., gt=0)
    nll_before: float
    nll_after: float
    ece_before: float = Field(..., ge=0, le=1)
    ece_after: float = Field(..., ge=0, le=1)
    bins: int
    n_calibration: int
    calibration_digest: str
    search_trace: List[List[float]] = Field(default_factory=list)
    provenance: Provenance


Section = Union[Dict[str, Any], Literal["out_of_scope"]]


class ReportModel(BaseModel):
    """Metrics report; one key per reporting category, each a section or "out_of_scope"."""
    schema_version: Literal["1.0"] = REPORT_SCHEMA_VERSION
    accuracy: Section
    calibration: Section
    selective_prediction: Section
    explainability: Section
    workflow: Section
    conformal: Section
    uncertainty: Section
    stratified: Section
    quality_control: Section
    provenance: Provenance


def report_schema() -> dict:
    schema = ReportModel.model_json_schema()
    schema["$id"] = f"plane-uq/report/{REPORT_SCHEMA_VERSION}"
    return schema
