"""Accuracy, calibration and stratified reporting metrics.

Conventions:
- confidence is the maximum row probability; predictions are row argmaxes with
  ties going to the lowest class index;
- ECE bins are equal-width on [0, 1], half-open [lo, hi) except the last, which
  is closed on the right; empty bins carry NaN (absent) statistics;
- Brier is the multiclass full-vector sum, range [0, 2].
"""

import logging
from dataclasses import dataclass

import numpy as np

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import frozen_array, validate_labels, validate_probabilities

logger = logging.getLogger(__name__)

DEFAULT_BINS = 15
LOW_SUPPORT = 20
BRIER_CONVENTION = "multiclass_sum_range_0_2"


def _inputs(p, y) -> tuple[np.ndarray, np.ndarray]:
    p = validate_probabilities(p)
    if p.ndim != 2:
        raise ValidationError(f"probabilities must be N x K, got shape {p.shape}")
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != p.shape[0]:
        raise ValidationError(
            f"labels of shape {y.shape} do not match probabilities of shape {p.shape}"
        )
    return p, validate_labels(y, p.shape[1], p.shape[0])


def _absent_to_none(values: np.ndarray) -> list[float | None]:
    return [None if np.isnan(v) else float(v) for v in values]


@dataclass(frozen=True)
class ReliabilityBins:
    edges: np.ndarray
    count: np.ndarray
    mean_confidence: np.ndarray
    accuracy: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.count.shape[0]

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "count": self.count.tolist(),
            "mean_confidence": _absent_to_none(self.mean_confidence),
            "accuracy": _absent_to_none(self.accuracy),
        }


def ece(p, y, bins: int = DEFAULT_BINS) -> tuple[float, ReliabilityBins]:
    """Expected calibration error and the reliability table behind it."""
    if int(bins) < 1:
        raise ValidationError(f"bins must be >= 1, got {bins}")
    bins = int(bins)
    p, y = _inputs(p, y)
    n = p.shape[0]
    confidence = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == y).astype(np.float64)

    edges = np.linspace(0.0, 1.0, bins + 1)
    index = np.searchsorted(edges[1:-1], confidence, side="right")
    count = np.bincount(index, minlength=bins)
    conf_sum = np.bincount(index, weights=confidence, minlength=bins)
    acc_sum = np.bincount(index, weights=correct, minlength=bins)

    occupied = count > 0
    mean_conf = np.full(bins, np.nan)
    accuracy = np.full(bins, np.nan)
    mean_conf[occupied] = conf_sum[occupied] / count[occupied]
    accuracy[occupied] = acc_sum[occupied] / count[occupied]

    gaps = np.abs(accuracy[occupied] - mean_conf[occupied])
    value = float(np.sum(count[occupied] / n * gaps))
    table = ReliabilityBins(
        edges=frozen_array(edges),
        count=frozen_array(count, dtype=np.int64),
        mean_confidence=frozen_array(mean_conf),
        accuracy=frozen_array(accuracy),
    )
    return min(max(value, 0.0), 1.0), table


def brier(p, y) -> float:
    """Mean over samples of sum_k (p_k - 1[y = k])^2."""
    p, y = _inputs(p, y)
    target = np.zeros_like(p)
    target[np.arange(p.shape[0]), y] = 1.0
    return float(np.mean(np.sum((p - target) ** 2, axis=1)))


@dataclass(frozen=True)
class ClassificationReport:
    confusion: np.ndarray
    macro_f1: float
    per_class_sensitivity: np.ndarray
    per_class_specificity: np.ndarray
    per_class_f1: np.ndarray
    top1_accuracy: float
    support: np.ndarray
    absent_classes: tuple[int, ...] = ()

    @property
    def num_samples(self) -> int:
        return int(self.confusion.sum())

    @property
    def top1_error(self) -> float:
        return 1.0 - self.top1_accuracy

    def to_dict(self) -> dict:
        return {
            "top1_accuracy": self.top1_accuracy,
            "macro_f1": self.macro_f1,
            "per_class_sensitivity": _absent_to_none(self.per_class_sensitivity),
            "per_class_specificity": _absent_to_none(self.per_class_specificity),
            "per_class_f1": self.per_class_f1.tolist(),
            "support": self.support.tolist(),
            "confusion_matrix": self.confusion.tolist(),
            "absent_classes": list(self.absent_classes),
        }


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def classification_report(p, y) -> ClassificationReport:
    """Confusion matrix (rows truth, columns prediction) and one-vs-rest rates."""
    p, y = _inputs(p, y)
    n, k = p.shape
    predicted = np.argmax(p, axis=1)
    confusion = np.bincount(y * k + predicted, minlength=k * k).reshape(k, k)

    tp = np.diag(confusion).astype(np.float64)
    fn = confusion.sum(axis=1) - tp
    fp = confusion.sum(axis=0) - tp
    tn = n - tp - fn - fp

    sensitivity = _safe_ratio(tp, tp + fn)
    specificity = _safe_ratio(tn, tn + fp)
    f1_den = 2 * tp + fp + fn
    f1 = np.zeros(k)
    np.divide(2 * tp, f1_den, out=f1, where=f1_den > 0)

    support = confusion.sum(axis=1)
    present = support > 0
    absent = tuple(int(c) for c in np.flatnonzero(~present))
    if absent:
        logger.warning(f"Classes {list(absent)} absent from labels; excluded from macro F1")

    return ClassificationReport(
        confusion=frozen_array(confusion, dtype=np.int64),
        macro_f1=float(np.mean(f1[present])),
        per_class_sensitivity=frozen_array(sensitivity),
        per_class_specificity=frozen_array(specificity),
        per_class_f1=frozen_array(f1),
        top1_accuracy=float(tp.sum() / n),
        support=frozen_array(support, dtype=np.int64),
        absent_classes=absent,
    )


@dataclass(frozen=True)
class StratumReport:
    group: str
    n_samples: int
    low_support: bool
    report: ClassificationReport
    ece: float
    reliability: ReliabilityBins
    brier: float

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "n_samples": self.n_samples,
            "low_support": self.low_support,
            "classification": self.report.to_dict(),
            "ece": self.ece,
            "reliability": self.reliability.to_dict(),
            "brier": self.brier,
        }


def stratified_report(
    p, y, groups, bins: int = DEFAULT_BINS, min_support: int = LOW_SUPPORT
) -> dict[str, StratumReport]:
    """Independent metrics per group key, keyed and ordered by sorted group name."""
    p, y = _inputs(p, y)
    groups = np.asarray([str(g) for g in groups])
    if groups.shape[0] != p.shape[0]:
        raise ValidationError(
            f"{groups.shape[0]} group keys for {p.shape[0]} samples"
        )
    strata: dict[str, StratumReport] = {}
    for group in sorted(set(groups.tolist())):
        mask = groups == group
        n_group = int(mask.sum())
        low = n_group < min_support
        if low:
            logger.warning(f"Stratum '{group}' has {n_group} samples (< {min_support})")
        ece_value, table = ece(p[mask], y[mask], bins)
        strata[group] = StratumReport(
            group=group,
            n_samples=n_group,
            low_support=low,
            report=classification_report(p[mask], y[mask]),
            ece=ece_value,
            reliability=table,
            brier=brier(p[mask], y[mask]),
        )
    return strata
