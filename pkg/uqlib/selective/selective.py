"""Risk-coverage analysis, abstention thresholds and accept/escalate decisions.

Samples are ranked by confidence descending, ties by original index ascending.
A threshold accepts every sample with confidence >= threshold, so only prefixes
that end at a tie-group boundary are reachable by a threshold policy.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import validate_probabilities

logger = logging.getLogger(__name__)


class ConfidenceSource(str, Enum):
    MAX_PROBABILITY = "max_probability"
    ONE_MINUS_UNCERTAINTY = "one_minus_uncertainty"
    EVIDENTIAL = "evidential"


class Decision(str, Enum):
    ACCEPT = "accept"
    ESCALATE = "escalate"


class ReasonCode(str, Enum):
    CONFIDENT = "confident"
    LOW_CONFIDENCE = "low_confidence"
    ABSTAIN_ALL = "abstain_all"


def confidence_scores(
    p=None,
    source: ConfidenceSource = ConfidenceSource.MAX_PROBABILITY,
    u_tilde=None,
    u_mass=None,
) -> np.ndarray:
    """Per-sample confidence from the configured statistic."""
    source = ConfidenceSource(source)
    if source is ConfidenceSource.MAX_PROBABILITY:
        if p is None:
            raise ValidationError("max_probability confidence needs probabilities")
        return validate_probabilities(p).max(axis=-1)
    values = u_tilde if source is ConfidenceSource.ONE_MINUS_UNCERTAINTY else u_mass
    if values is None:
        raise ValidationError(f"{source.value} confidence needs its uncertainty input")
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise ValidationError(f"{source.value} uncertainty must lie in [0, 1]")
    return 1.0 - values


@dataclass(frozen=True)
class RiskCoveragePoint:
    coverage: float
    risk: float
    threshold: float
    n_accepted: int

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "risk": self.risk,
            "threshold": self.threshold,
            "n_accepted": self.n_accepted,
        }


@dataclass(frozen=True)
class RiskCoverageCurve:
    points: tuple[RiskCoveragePoint, ...]
    aurc: float
    # prefix sizes that close a tie group of equal confidence
    reachable: tuple[int, ...] = field(default=())

    @property
    def n_samples(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def __getitem__(self, index):
        return self.points[index]

    def policy_points(self) -> list[RiskCoveragePoint]:
        return [self.points[k - 1] for k in self.reachable]

    def to_dict(self) -> dict:
        return {
            "aurc": self.aurc,
            "coverage": [pt.coverage for pt in self.points],
            "risk": [pt.risk for pt in self.points],
            "threshold": [pt.threshold for pt in self.points],
        }


def risk_coverage_curve(confidence, correct) -> RiskCoverageCurve:
    """Selective risk of every confidence-ranked prefix, plus AURC (mean prefix risk)."""
    confidence = np.asarray(confidence, dtype=np.float64).ravel()
    correct = np.asarray(correct).ravel()
    n = confidence.shape[0]
    if n < 1:
        raise ValidationError("risk-coverage curve needs at least one sample")
    if correct.shape[0] != n:
        raise ValidationError(f"{correct.shape[0]} correctness flags for {n} confidences")
    if not np.all(np.isfinite(confidence)):
        raise ValidationError("confidence contains non-finite values")
    correct = correct.astype(bool)

    order = np.lexsort((np.arange(n), -confidence))
    ranked_conf = confidence[order]
    hits = np.cumsum(correct[order])
    sizes = np.arange(1, n + 1)
    risks = 1.0 - hits / sizes
    ends = np.flatnonzero(np.append(ranked_conf[1:] < ranked_conf[:-1], True)) + 1

    points = tuple(
        RiskCoveragePoint(
            coverage=float(k / n),
            risk=float(r),
            threshold=float(t),
            n_accepted=int(k),
        )
        for k, r, t in zip(sizes, risks, ranked_conf)
    )
    return RiskCoverageCurve(points, float(np.mean(risks)), tuple(int(k) for k in ends))


@dataclass(frozen=True)
class SelectivePolicy:
    threshold: float
    target_risk: float | None
    achieved_risk: float | None
    abstention_rate: float
    coverage: float
    feasible: bool = True

    @property
    def abstain_all(self) -> bool:
        return math.isinf(self.threshold) and self.threshold > 0

    def to_dict(self) -> dict:
        return {
            "threshold": None if self.abstain_all else self.threshold,
            "target_risk": self.target_risk,
            "achieved_risk": self.achieved_risk,
            "abstention_rate": self.abstention_rate,
            "coverage": self.coverage,
            "feasible": self.feasible,
            "abstain_all": self.abstain_all,
        }


ABSTAIN_ALL_THRESHOLD = math.inf


def threshold_for_target_risk(curve: RiskCoverageCurve, target: float) -> SelectivePolicy:
    """Largest reachable coverage whose selective risk is at most ``target``."""
    if len(curve) == 0:
        raise ValidationError("empty risk-coverage curve")
    target = float(target)
    if not 0.0 <= target <= 1.0:
        raise ValidationError(f"target risk must lie in [0, 1], got {target}")
    feasible = [pt for pt in curve.policy_points() if pt.risk <= target]
    if not feasible:
        logger.warning(f"No threshold reaches risk <= {target}; abstaining on every sample")
        return SelectivePolicy(
            threshold=ABSTAIN_ALL_THRESHOLD,
            target_risk=target,
            achieved_risk=None,
            abstention_rate=1.0,
            coverage=0.0,
            feasible=False,
        )
    best = max(feasible, key=lambda pt: pt.n_accepted)
    return SelectivePolicy(
        threshold=best.threshold,
        target_risk=target,
        achieved_risk=best.risk,
        abstention_rate=1.0 - best.coverage,
        coverage=best.coverage,
    )


def policy_from_threshold(threshold: float, confidence=None, correct=None) -> SelectivePolicy:
    """Wrap a user-supplied threshold; coverage and risk are filled in when data is given."""
    threshold = float(threshold)
    if math.isnan(threshold):
        raise ValidationError("threshold is NaN")
    if confidence is None:
        return SelectivePolicy(threshold, None, None, float("nan"), float("nan"))
    confidence = np.asarray(confidence, dtype=np.float64)
    accepted = confidence >= threshold
    coverage = float(accepted.mean())
    risk = None
    if correct is not None and accepted.any():
        risk = float(1.0 - np.asarray(correct, dtype=bool)[accepted].sum() / accepted.sum())
    return SelectivePolicy(threshold, None, risk, 1.0 - coverage, coverage)


@dataclass(frozen=True)
class DecisionRecord:
    decision: Decision
    reason: ReasonCode
    confidence: float
    threshold: float
    set_size: int | None = None

    @property
    def needs_review(self) -> bool:
        return self.set_size is not None and self.set_size > 1

    def to_dict(self) -> dict:
        return {
            "decision": self.decision.value,
            "reason": self.reason.value,
            "confidence": self.confidence,
            "threshold": None if math.isinf(self.threshold) else self.threshold,
            "set_size": self.set_size,
            "needs_review": self.needs_review,
        }


def selective_decide(
    confidence: float, policy: SelectivePolicy, set_size: int | None = None
) -> DecisionRecord:
    """Accept iff confidence >= threshold; an abstain-all policy escalates everything."""
    confidence = float(confidence)
    if math.isnan(confidence):
        raise ValidationError("confidence is NaN")
    if policy.abstain_all:
        return DecisionRecord(
            Decision.ESCALATE, ReasonCode.ABSTAIN_ALL, confidence, policy.threshold, set_size
        )
    if confidence >= policy.threshold:
        return DecisionRecord(
            Decision.ACCEPT, ReasonCode.CONFIDENT, confidence, policy.threshold, set_size
        )
    return DecisionRecord(
        Decision.ESCALATE, ReasonCode.LOW_CONFIDENCE, confidence, policy.threshold, set_size
    )


def decide_all(confidence, policy: SelectivePolicy, set_sizes=None) -> list[DecisionRecord]:
    confidence = np.asarray(confidence, dtype=np.float64).ravel()
    sizes = [None] * confidence.shape[0] if set_sizes is None else [int(s) for s in set_sizes]
    if len(sizes) != confidence.shape[0]:
        raise ValidationError("set sizes and confidences disagree on N")
    return [selective_decide(c, policy, s) for c, s in zip(confidence, sizes)]
