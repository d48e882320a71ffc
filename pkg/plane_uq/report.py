"""
Report assembly: metrics, conformal sets, selective decisions and stratified
sections over one evaluation split.

Every number placed in the report comes from a uqlib operation; this module only
arranges the results and the per-sample decision table.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from uqlib.conformal import PredictionSet, SplitConformal, coverage_report
from uqlib.core import PassStack, ValidationError
from uqlib.metrics import BRIER_CONVENTION, brier, classification_report, ece, stratified_report
from uqlib.selective import (
    ConfidenceSource,
    Decision,
    DecisionRecord,
    RiskCoverageCurve,
    SelectivePolicy,
    confidence_scores,
    decide_all,
    policy_from_threshold,
    risk_coverage_curve,
    threshold_for_target_risk,
)
from uqlib.uncertainty import normalize_uncertainty, predictive_entropy, uncertainty_scores

from .charts import reliability_svg, risk_coverage_svg
from .models import OUT_OF_SCOPE, ReportConfig

logger = logging.getLogger(__name__)


@dataclass
class SplitScores:
    """Scores of one split, rows aligned with ``sample_ids``."""
    sample_ids: List[str]
    labels: np.ndarray
    probabilities: np.ndarray
    raw_probabilities: Optional[np.ndarray] = None
    stack: Optional[PassStack] = None
    groups: Optional[np.ndarray] = None
    quality: Optional[np.ndarray] = None

    @property
    def num_classes(self) -> int:
        return self.probabilities.shape[1]


@dataclass
class CalibrationInfo:
    temperature: float
    n_calibration: int
    calibration_digest: str


@dataclass
class ReportBundle:
    report: Dict[str, Any]
    decisions: pd.DataFrame
    reliability_svg: str
    risk_coverage_svg: str


def nll(p: np.ndarray, y: np.ndarray) -> float:
    picked = np.clip(p[np.arange(y.shape[0]), y], np.finfo(np.float64).tiny, 1.0)
    return float(-np.log(picked).mean())


def calibration_summary(p: np.ndarray, y: np.ndarray, bins: int) -> Tuple[Dict[str, Any], Any]:
    value, table = ece(p, y, bins)
    return {
        "ece": value,
        "brier": brier(p, y),
        "nll": nll(p, y),
        "reliability": table.to_dict(),
    }, table


def _summary(values: np.ndarray) -> Dict[str, float]:
    q05, q50, q95 = np.quantile(values, [0.05, 0.5, 0.95])
    return {
        "mean": float(values.mean()),
        "q05": float(q05),
        "median": float(q50),
        "q95": float(q95),
        "max": float(values.max()),
    }


def uncertainty_columns(scores: SplitScores) -> Dict[str, np.ndarray]:
    """Per-sample entropy and normalized uncertainty, plus MI and disagreement for stacks."""
    if scores.stack is not None:
        u = uncertainty_scores(scores.stack)
        return {
            "entropy": u.entropy,
            "u_tilde": u.normalized,
            "mutual_information": u.mutual_information,
            "disagreement": u.disagreement,
        }
    entropy = np.atleast_1d(predictive_entropy(scores.probabilities))
    return {"entropy": entropy, "u_tilde": np.atleast_1d(normalize_uncertainty(entropy, scores.num_classes))}


def fit_conformal(
    calibration: SplitScores, evaluation: SplitScores, config: ReportConfig, seed: int
) -> Tuple[Dict[str, Any], List[PredictionSet]]:
    conformal = SplitConformal(config.alpha, config.randomized, seed if config.randomized else None)
    fitted = conformal.fit(calibration.probabilities, calibration.labels)
    sets = conformal.predict(evaluation.probabilities)
    section = fitted.to_dict()
    section["score"] = "aps"
    section["evaluation"] = coverage_report(sets, evaluation.labels).to_dict()
    return section, sets


def selective_policy(
    confidence: np.ndarray, correct: np.ndarray, config: ReportConfig
) -> Tuple[RiskCoverageCurve, SelectivePolicy]:
    curve = risk_coverage_curve(confidence, correct)
    if config.threshold is not None:
        policy = policy_from_threshold(config.threshold, confidence, correct)
    else:
        policy = threshold_for_target_risk(curve, config.target_risk)
    return curve, policy


def confidence_for(scores: SplitScores, config: ReportConfig, u_tilde: np.ndarray) -> np.ndarray:
    if config.confidence_source is ConfidenceSource.ONE_MINUS_UNCERTAINTY:
        return confidence_scores(source=config.confidence_source, u_tilde=u_tilde)
    return confidence_scores(scores.probabilities, config.confidence_source)


def example_cases(
    ids: List[str], confidence: np.ndarray, correct: np.ndarray, u_tilde: np.ndarray, n: int
) -> Dict[str, List[str]]:
    """Most confident correct, most confident incorrect and most uncertain sample ids."""
    index = np.arange(len(ids))

    def top(mask: np.ndarray, key: np.ndarray) -> List[str]:
        order = np.lexsort((index[mask], -key[mask]))
        return [ids[i] for i in index[mask][order][:n]]

    return {
        "confident_correct": top(correct, confidence),
        "confident_incorrect": top(~correct, confidence),
        "most_uncertain": top(np.ones_like(correct), u_tilde),
    }


def workflow_section(records: List[DecisionRecord]) -> Dict[str, Any]:
    decisions = [r.decision.value for r in records]
    reasons = [r.reason.value for r in records]
    review = sum(r.needs_review for r in records)
    n = len(records)
    return {
        "n_samples": n,
        "decisions": {d.value: decisions.count(d.value) for d in Decision},
        "reasons": {r: reasons.count(r) for r in sorted(set(reasons))},
        "needs_review": review,
        "escalation_rate": decisions.count(Decision.ESCALATE.value) / n,
        "review_rate": review / n,
        "actions": {
            "accept": "prediction released",
            "escalate": "routed to expert review",
            "needs_review": "conformal set holds more than one plane",
        },
    }


def stratified_section(
    scores: SplitScores,
    config: ReportConfig,
    sets: List[PredictionSet],
    records: List[DecisionRecord],
) -> Dict[str, Any]:
    strata = stratified_report(
        scores.probabilities, scores.labels, scores.groups, config.bins, config.min_support
    )
    groups = np.asarray([str(g) for g in scores.groups])
    section: Dict[str, Any] = {"group_by": config.group_by, "groups": {}}
    for key, stratum in strata.items():
        idx = np.flatnonzero(groups == key)
        entry = stratum.to_dict()
        entry["conformal"] = coverage_report([sets[i] for i in idx], scores.labels[idx]).to_dict()
        escalated = sum(records[i].decision is Decision.ESCALATE for i in idx)
        entry["abstention_rate"] = escalated / idx.size
        section["groups"][key] = entry
    return section


def build_report(
    calibration: SplitScores,
    evaluation: SplitScores,
    config: ReportConfig,
    seed: int,
    temperature: Optional[CalibrationInfo] = None,
) -> ReportBundle:
    """All report sections except provenance, plus the decision table and charts."""
    if calibration.num_classes != evaluation.num_classes:
        raise ValidationError("calibration and evaluation scores disagree on K")
    p, y = evaluation.probabilities, evaluation.labels
    prediction = np.argmax(p, axis=1)
    correct = prediction == y

    accuracy = classification_report(p, y)
    accuracy_section = accuracy.to_dict()
    accuracy_section["top1_error"] = accuracy.top1_error
    accuracy_section["n_samples"] = accuracy.num_samples

    raw = evaluation.raw_probabilities if evaluation.raw_probabilities is not None else p
    before, before_table = calibration_summary(raw, y, config.bins)
    after, after_table = (None, None)
    if temperature is not None:
        after, after_table = calibration_summary(p, y, config.bins)
    calibration_section = {
        "method": "temperature_scaling" if temperature is not None else "none",
        "temperature": None if temperature is None else temperature.temperature,
        "calibration_split": None
        if temperature is None
        else {"n_samples": temperature.n_calibration, "digest": temperature.calibration_digest},
        "bins": config.bins,
        "brier_convention": BRIER_CONVENTION,
        "before": before,
        "after": after,
    }

    conformal_section, sets = fit_conformal(calibration, evaluation, config, seed)

    columns = uncertainty_columns(evaluation)
    confidence = confidence_for(evaluation, config, columns["u_tilde"])
    curve, policy = selective_policy(confidence, correct, config)
    records = decide_all(confidence, policy, [s.size for s in sets])
    selective_section = {
        "confidence_source": config.confidence_source.value,
        "policy": policy.to_dict(),
        "aurc": curve.aurc,
        "n_points": len(curve),
        "full_coverage_risk": curve[-1].risk,
    }

    uncertainty_section = {name: _summary(values) for name, values in columns.items()}
    uncertainty_section["source"] = "pass_stack" if evaluation.stack is not None else "probabilities"
    if evaluation.stack is not None:
        uncertainty_section["num_passes"] = evaluation.stack.num_passes

    report: Dict[str, Any] = {
        "accuracy": accuracy_section,
        "calibration": calibration_section,
        "selective_prediction": selective_section,
        "explainability": {
            "attribution_method": "lime_superpixel",
            "stability": "repeated_seed_intervals",
            "example_cases": example_cases(
                evaluation.sample_ids, confidence, correct, columns["u_tilde"], config.n_examples
            ),
        },
        "workflow": workflow_section(records),
        "conformal": conformal_section,
        "uncertainty": uncertainty_section,
        "stratified": OUT_OF_SCOPE,
        "quality_control": {
            "column": "quality",
            "supplied": evaluation.quality is not None,
            "n_supplied": 0
            if evaluation.quality is None
            else int(sum(str(q) != "" for q in evaluation.quality)),
        },
    }
    if evaluation.groups is not None:
        report["stratified"] = stratified_section(evaluation, config, sets, records)

    decisions = decision_table(evaluation, prediction, correct, records, sets, columns, config)
    return ReportBundle(
        report=report,
        decisions=decisions,
        reliability_svg=reliability_svg(before_table, after_table),
        risk_coverage_svg=risk_coverage_svg(curve, policy),
    )


def decision_table(
    scores: SplitScores,
    prediction: np.ndarray,
    correct: np.ndarray,
    records: List[DecisionRecord],
    sets: Optional[List[PredictionSet]],
    columns: Dict[str, np.ndarray],
    config: ReportConfig,
) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "sample_id": scores.sample_ids,
            "label": scores.labels,
            "prediction": prediction,
            "correct": correct,
            "confidence": [r.confidence for r in records],
            "decision": [r.decision.value for r in records],
            "reason": [r.reason.value for r in records],
        }
    )
    if sets is not None:
        frame["set_size"] = [s.size for s in sets]
        frame["prediction_set"] = [";".join(str(m) for m in s.members) for s in sets]
        frame["needs_review"] = [r.needs_review for r in records]
    for name, values in columns.items():
        frame[name] = values
    if scores.groups is not None:
        frame[config.group_by] = scores.groups
    if scores.quality is not None:
        frame["quality"] = scores.quality
    return frame
