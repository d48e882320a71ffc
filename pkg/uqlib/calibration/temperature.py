"""Temperature scaling fitted by NLL minimisation on a held-out calibration set.

The search runs in log-temperature space: a geometric grid presearch over
[T_MIN, T_MAX] (T = 1 always included), then golden-section refinement on the
bracket around the best grid point.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from uqlib.core.errors import CalibrationError, ValidationError
from uqlib.core.simplex import (
    ProbabilityMatrix,
    softmax,
    validate_labels,
    validate_logits,
)

logger = logging.getLogger(__name__)

T_MIN = 0.05
T_MAX = 20.0
GRID_POINTS = 50
LOG_T_TOL = 1e-4
MIN_CALIBRATION_SIZE = 10
WARN_CALIBRATION_SIZE = 100

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _check_temperature(temperature: float) -> float:
    temperature = float(temperature)
    if not (temperature > 0.0 and math.isfinite(temperature)):
        raise ValidationError(f"temperature must be positive and finite, got {temperature}")
    return temperature


def nll(z, y, temperature: float) -> float:
    """Mean negative log-likelihood of labels under softmax(z / T), in nats."""
    temperature = _check_temperature(temperature)
    z = validate_logits(z)
    y = validate_labels(y, z.shape[1], z.shape[0])
    log_p = log_softmax(z / temperature, axis=1)
    return float(-log_p[np.arange(z.shape[0]), y].mean())


def apply_temperature(z, temperature: float) -> ProbabilityMatrix:
    """Row-wise softmax(z / T); argmax of each row is unchanged."""
    temperature = _check_temperature(temperature)
    z = validate_logits(z)
    return softmax(z / temperature)


@dataclass
class TemperatureFit:
    temperature: float
    nll_before: float
    nll_after: float
    search_trace: list[tuple[float, float]] = field(default_factory=list)
    n_samples: int = 0

    def apply(self, z) -> ProbabilityMatrix:
        return apply_temperature(z, self.temperature)

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "nll_before": self.nll_before,
            "nll_after": self.nll_after,
            "n_samples": self.n_samples,
            "search_trace": [[t, v] for t, v in self.search_trace],
        }


class TemperatureScaler:
    """Grid + golden-section search for the NLL-optimal temperature."""

    def __init__(
        self,
        t_min: float = T_MIN,
        t_max: float = T_MAX,
        grid_points: int = GRID_POINTS,
        tol: float = LOG_T_TOL,
    ):
        if not 0 < t_min < 1.0 < t_max:
            raise ValidationError(f"search range must bracket 1, got [{t_min}, {t_max}]")
        if grid_points < 3:
            raise ValidationError("grid presearch needs at least 3 points")
        self.t_min = t_min
        self.t_max = t_max
        self.grid_points = grid_points
        self.tol = tol

    def fit(self, z, y) -> TemperatureFit:
        z = validate_logits(z)
        n, k = z.shape
        y = validate_labels(y, k, n)
        if n < MIN_CALIBRATION_SIZE:
            raise ValidationError(
                f"calibration set has {n} samples; at least {MIN_CALIBRATION_SIZE} required"
            )
        if n < WARN_CALIBRATION_SIZE:
            logger.warning(
                f"Calibration set has only {n} samples (< {WARN_CALIBRATION_SIZE}); "
                "the fitted temperature may be unreliable"
            )
        if np.unique(y).size < 2:
            raise CalibrationError(
                f"calibration labels contain a single class ({int(y[0])}); cannot fit"
            )

        rows = np.arange(n)
        trace: dict[float, float] = {}

        def objective(log_t: float) -> float:
            t = min(max(math.exp(log_t), self.t_min), self.t_max)
            if t not in trace:
                log_p = log_softmax(z / t, axis=1)
                trace[t] = float(-log_p[rows, y].mean())
            return trace[t]

        grid = np.linspace(math.log(self.t_min), math.log(self.t_max), self.grid_points)
        grid = np.unique(np.append(grid, 0.0))
        values = [objective(g) for g in grid]
        best = int(np.argmin(values))
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, grid.size - 1)]
        self._golden_section(objective, lo, hi)

        t_star = min(trace, key=lambda t: (trace[t], t))
        nll_before = objective(0.0)
        fit = TemperatureFit(
            temperature=t_star,
            nll_before=nll_before,
            nll_after=trace[t_star],
            search_trace=sorted(trace.items()),
            n_samples=n,
        )
        logger.info(
            f"Fitted temperature {t_star:.4f} on {n} samples "
            f"(NLL {nll_before:.4f} -> {fit.nll_after:.4f})"
        )
        return fit

    def _golden_section(self, objective, lo: float, hi: float) -> float:
        a, b = lo, hi
        c = b - _INV_PHI * (b - a)
        d = a + _INV_PHI * (b - a)
        fc, fd = objective(c), objective(d)
        while b - a > self.tol:
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - _INV_PHI * (b - a)
                fc = objective(c)
            else:
                a, c, fc = c, d, fd
                d = a + _INV_PHI * (b - a)
                fd = objective(d)
        return (a + b) / 2.0


def fit_temperature(z, y, **kwargs) -> TemperatureFit:
    return TemperatureScaler(**kwargs).fit(z, y)


def temperature_probabilities(z, fit: TemperatureFit | None) -> ProbabilityMatrix:
    """Calibrated probabilities if a fit is available, plain softmax otherwise."""
    if fit is None:
        return softmax(validate_logits(z))
    return fit.apply(z)
