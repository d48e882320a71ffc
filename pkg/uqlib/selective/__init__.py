from uqlib.selective.selective import (
    ABSTAIN_ALL_THRESHOLD,
    ConfidenceSource,
    Decision,
    DecisionRecord,
    ReasonCode,
    RiskCoverageCurve,
    RiskCoveragePoint,
    SelectivePolicy,
    confidence_scores,
    decide_all,
    policy_from_threshold,
    risk_coverage_curve,
    selective_decide,
    threshold_for_target_risk,
)

__all__ = [
    "ABSTAIN_ALL_THRESHOLD",
    "ConfidenceSource",
    "Decision",
    "DecisionRecord",
    "ReasonCode",
    "RiskCoverageCurve",
    "RiskCoveragePoint",
    "SelectivePolicy",
    "confidence_scores",
    "decide_all",
    "policy_from_threshold",
    "risk_coverage_curve",
    "selective_decide",
    "threshold_for_target_risk",
]
