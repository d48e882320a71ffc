"""
Plane UQ Toolkit.

Command-line pipeline around the uqlib library: synthetic fixtures, temperature
calibration, metrics reports with conformal sets and selective decisions, and
LIME explanation bundles. Every artifact is deterministic per seed.
"""

from .models import (
    TOOL_VERSION,
    REPORT_SCHEMA_VERSION,
    CalibrateConfig,
    CalibrationArtifact,
    ExplainConfig,
    LimeSettings,
    Provenance,
    ReportConfig,
    ReportModel,
    SynthConfig,
    report_schema,
)
from .pipeline_manager import PipelineConfig, PlanePipeline, ScoreSource
from .report import ReportBundle, SplitScores, build_report
from .synth import SynthFixture, generate_fixture, write_fixture
from .tensor_io import Manifest, Splits, read_manifest, read_splits

__version__ = TOOL_VERSION

__all__ = [
    # Pipeline
    "PlanePipeline",
    "PipelineConfig",
    "ScoreSource",

    # Configs and artifacts
    "SynthConfig",
    "CalibrateConfig",
    "ReportConfig",
    "ExplainConfig",
    "LimeSettings",
    "CalibrationArtifact",
    "ReportModel",
    "Provenance",
    "REPORT_SCHEMA_VERSION",
    "report_schema",

    # Reports and fixtures
    "ReportBundle",
    "SplitScores",
    "build_report",
    "SynthFixture",
    "generate_fixture",
    "write_fixture",

    # File formats
    "Manifest",
    "Splits",
    "read_manifest",
    "read_splits",
]
