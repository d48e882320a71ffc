"""Split-conformal prediction sets with adaptive (APS) scores.

Classes are ranked by descending probability, ties to the lowest class index.
The score of a label is the cumulative mass of the classes ranked before it plus
its own mass (or ``u`` times its own mass in the randomized variant). Scores and
set construction share the same cumulative sums, so a label with positive mass
whose score is at most ``qhat`` is always inside its set.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import softmax, validate_labels, validate_probabilities

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1
_INDEX_EPS = 1e-12


def _ranked(p: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Descending order, cumulative mass in that order, and each class's rank."""
    order = np.argsort(-p, axis=-1, kind="stable")
    cumulative = np.cumsum(np.take_along_axis(p, order, axis=-1), axis=-1)
    rank = np.argsort(order, axis=-1, kind="stable")
    return order, cumulative, rank


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


def _check_u(u, shape) -> np.ndarray:
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), shape)
    if not np.all((u >= 0.0) & (u <= 1.0)):
        raise ValidationError("randomization draws u must lie in [0, 1]")
    return u


def aps_scores(p, y, randomized: bool = False, u=None) -> np.ndarray:
    """APS conformity scores for an N x K probability matrix."""
    p = validate_probabilities(p)
    if p.ndim != 2:
        raise ValidationError(f"probabilities must be N x K, got shape {p.shape}")
    n, k = p.shape
    y = validate_labels(y, k, n)
    _, cumulative, rank = _ranked(p)
    rows = np.arange(n)
    r_y = rank[rows, y]
    if not randomized:
        scores = cumulative[rows, r_y]
    else:
        if u is None:
            raise ValidationError("randomized scores need u draws")
        before = np.where(r_y > 0, cumulative[rows, np.maximum(r_y - 1, 0)], 0.0)
        scores = before + _check_u(u, (n,)) * p[rows, y]
    return np.minimum(scores, 1.0)


def aps_score(p, y: int, randomized: bool = False, u: float | None = None) -> float:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError(f"probability vector expected, got shape {p.shape}")
    return float(aps_scores(p[None, :], [y], randomized, None if u is None else [u])[0])


@dataclass(frozen=True)
class ConformalCalibration:
    qhat: float
    alpha: float
    n_cal: int
    randomized: bool = False
    k: int = 0
    clamped: bool = False

    def to_dict(self) -> dict:
        return {
            "qhat": self.qhat,
            "alpha": self.alpha,
            "n_cal": self.n_cal,
            "randomized": self.randomized,
            "k": self.k,
            "clamped": self.clamped,
        }


def conformal_quantile(scores, alpha: float, randomized: bool = False) -> ConformalCalibration:
    """qhat = k-th smallest score, k = ceil((n + 1)(1 - alpha)); 1.0 if k > n."""
    alpha = _check_alpha(alpha)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.shape[0]
    if n < 1:
        raise ValidationError("conformal calibration needs at least one score")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("conformal scores contain non-finite values")
    k = math.ceil((n + 1) * (1.0 - alpha) - _INDEX_EPS)
    if k > n:
        logger.warning(
            f"Quantile index {k} exceeds calibration size {n} at alpha={alpha}; "
            "clamping qhat to 1.0"
        )
        return ConformalCalibration(1.0, alpha, n, randomized, k, clamped=True)
    qhat = float(np.sort(scores)[k - 1])
    return ConformalCalibration(min(max(qhat, 0.0), 1.0), alpha, n, randomized, k)


@dataclass(frozen=True)
class PredictionSet:
    members: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.members)

    def __contains__(self, label) -> bool:
        return int(label) in self.members


def set_membership(p, qhat: float, u=None) -> np.ndarray:
    """Boolean N x K membership matrix for the sets at threshold ``qhat``.

    Deterministic rule: add classes in rank order until the cumulative mass
    reaches ``qhat``. With ``u`` draws, a class of rank r joins iff
    (mass ranked before it) + u * (its mass) <= qhat. The top-1 class is
    always a member; ``qhat >= 1`` yields every class.
    """
    p = validate_probabilities(p)
    if p.ndim != 2:
        raise ValidationError(f"probabilities must be N x K, got shape {p.shape}")
    n, k = p.shape
    if qhat >= 1.0:
        return np.ones((n, k), dtype=bool)
    order, cumulative, _ = _ranked(p)
    before = np.concatenate([np.zeros((n, 1)), cumulative[:, :-1]], axis=1)
    if u is None:
        keep = before < qhat
    else:
        u = _check_u(u, (n,))[:, None]
        keep = before + u * np.take_along_axis(p, order, axis=1) <= qhat
    keep[:, 0] = True
    membership = np.zeros((n, k), dtype=bool)
    np.put_along_axis(membership, order, keep, axis=1)
    return membership


def _as_qhat(cal) -> float:
    return cal.qhat if isinstance(cal, ConformalCalibration) else float(cal)


def prediction_sets(p, cal, u=None) -> list[PredictionSet]:
    membership = set_membership(p, _as_qhat(cal), u)
    return [PredictionSet(tuple(int(c) for c in np.flatnonzero(row))) for row in membership]


def prediction_set(p, cal, u: float | None = None) -> PredictionSet:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError(f"probability vector expected, got shape {p.shape}")
    return prediction_sets(p[None, :], cal, None if u is None else [u])[0]


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    mean_size: float
    size_histogram: dict[int, int] = field(default_factory=dict)
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "mean_size": self.mean_size,
            "size_histogram": {str(s): c for s, c in sorted(self.size_histogram.items())},
            "n_samples": self.n_samples,
        }


def coverage_report(sets, y) -> CoverageReport:
    """Empirical coverage, mean set size and set-size histogram."""
    sets = list(sets)
    y = np.asarray(y)
    if y.ndim != 1 or len(sets) != y.shape[0]:
        raise ValidationError(f"{len(sets)} prediction sets for {y.shape} labels")
    if not sets:
        raise ValidationError("coverage needs at least one prediction set")
    covered = np.array([int(label) in s for s, label in zip(sets, y)])
    sizes = np.array([s.size for s in sets])
    values, counts = np.unique(sizes, return_counts=True)
    return CoverageReport(
        coverage=float(covered.mean()),
        mean_size=float(sizes.mean()),
        size_histogram={int(v): int(c) for v, c in zip(values, counts)},
        n_samples=len(sets),
    )


class SplitConformal:
    """Calibrate on one split, build sets on another.

    The randomized variant draws one ``u`` per sample from a generator seeded at
    construction; calibration draws come first, then prediction draws in call order.
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, randomized: bool = False, seed=None):
        self.alpha = _check_alpha(alpha)
        self.randomized = randomized
        if randomized and seed is None:
            raise ValidationError("randomized conformal prediction requires an explicit seed")
        self.rng = np.random.default_rng(seed)
        self.calibration: ConformalCalibration | None = None

    def _draws(self, n: int) -> np.ndarray | None:
        return self.rng.random(n) if self.randomized else None

    def fit(self, p_cal, y_cal) -> ConformalCalibration:
        p_cal = validate_probabilities(p_cal)
        scores = aps_scores(p_cal, y_cal, self.randomized, self._draws(p_cal.shape[0]))
        self.calibration = conformal_quantile(scores, self.alpha, self.randomized)
        logger.info(
            f"Conformal qhat={self.calibration.qhat:.6f} from {self.calibration.n_cal} "
            f"calibration samples (alpha={self.alpha})"
        )
        return self.calibration

    def predict(self, p) -> list[PredictionSet]:
        if self.calibration is None:
            raise ValidationError("SplitConformal.predict called before fit")
        p = validate_probabilities(p)
        return prediction_sets(p, self.calibration, self._draws(p.shape[0]))


def _exchangeable_draw(rng, n: int, num_classes: int, scale: float):
    p = softmax(rng.normal(0.0, scale, size=(n, num_classes)))
    cumulative = np.cumsum(p, axis=1)
    y = (rng.random(n)[:, None] >= cumulative).sum(axis=1)
    return p, np.minimum(y, num_classes - 1)


def simulate_coverage(
    seeds,
    alpha: float = DEFAULT_ALPHA,
    n_cal: int = 500,
    n_test: int = 5000,
    num_classes: int = 10,
    randomized: bool = False,
    logit_scale: float = 1.0,
    progress: bool = False,
) -> list[CoverageReport]:
    """Empirical coverage on exchangeable synthetic draws, one report per seed.

    Labels are sampled from the predicted distribution itself, so calibration and
    test sets are exchangeable by construction.
    """
    reports = []
    for seed in tqdm(list(seeds), desc="coverage", disable=not progress):
        data_seed, draw_seed = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(data_seed)
        p_cal, y_cal = _exchangeable_draw(rng, n_cal, num_classes, logit_scale)
        p_test, y_test = _exchangeable_draw(rng, n_test, num_classes, logit_scale)
        conformal = SplitConformal(alpha, randomized, seed=draw_seed)
        conformal.fit(p_cal, y_cal)
        reports.append(coverage_report(conformal.predict(p_test), y_test))
    return reports
