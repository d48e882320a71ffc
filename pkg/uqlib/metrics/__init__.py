from uqlib.metrics.metrics import (
    BRIER_CONVENTION,
    DEFAULT_BINS,
    ClassificationReport,
    ReliabilityBins,
    StratumReport,
    brier,
    classification_report,
    ece,
    stratified_report,
)

__all__ = [
    "BRIER_CONVENTION",
    "DEFAULT_BINS",
    "ClassificationReport",
    "ReliabilityBins",
    "StratumReport",
    "brier",
    "classification_report",
    "ece",
    "stratified_report",
]
