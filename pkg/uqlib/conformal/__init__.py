from uqlib.conformal.conformal import (
    DEFAULT_ALPHA,
    ConformalCalibration,
    CoverageReport,
    PredictionSet,
    SplitConformal,
    aps_score,
    aps_scores,
    conformal_quantile,
    coverage_report,
    prediction_set,
    prediction_sets,
    set_membership,
    simulate_coverage,
)

__all__ = [
    "DEFAULT_ALPHA",
    "ConformalCalibration",
    "CoverageReport",
    "PredictionSet",
    "SplitConformal",
    "aps_score",
    "aps_scores",
    "conformal_quantile",
    "coverage_report",
    "prediction_set",
    "prediction_sets",
    "set_membership",
    "simulate_coverage",
]
