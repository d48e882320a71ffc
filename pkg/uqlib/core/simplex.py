"""Shared numeric types and simplex helpers.

All arrays handed out by this module are float64, C-ordered and read-only, so they
can be shared across threads without copying.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import softmax as _scipy_softmax

from uqlib.core.errors import ValidationError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-6

ProbabilityMatrix = np.ndarray
LogitsMatrix = np.ndarray
LabelVector = np.ndarray


def frozen_array(values, dtype=np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True, order="C")
    array.flags.writeable = False
    return array


def _require_finite(values: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValidationError(f"{name} contains a non-finite entry at index {tuple(bad)}")


def validate_probabilities(
    p, tol: float = SIMPLEX_TOL, name: str = "probabilities"
) -> ProbabilityMatrix:
    """Check that every row along the last axis lies on the simplex.

    Rows within ``tol`` of the simplex are clipped and renormalised so that
    downstream sums are exact up to float64 rounding.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0:
        raise ValidationError(f"{name} must have at least one axis")
    if p.shape[-1] < 2:
        raise ValidationError(f"{name} needs K >= 2 classes, got {p.shape[-1]}")
    if p.size == 0:
        raise ValidationError(f"{name} is empty")
    _require_finite(p, name)
    if np.any(p < -tol) or np.any(p > 1.0 + tol):
        bad = np.argwhere((p < -tol) | (p > 1.0 + tol))[0]
        raise ValidationError(f"{name} entry at {tuple(bad)} is outside [0, 1]")
    sums = p.sum(axis=-1)
    off = np.abs(sums - 1.0) > tol
    if np.any(off):
        bad = np.argwhere(off)[0]
        raise ValidationError(
            f"{name} row {tuple(bad)} sums to {sums[tuple(bad)]:.9f}, not 1"
        )
    p = np.clip(p, 0.0, 1.0)
    return frozen_array(p / p.sum(axis=-1, keepdims=True))


def validate_logits(z, name: str = "logits") -> LogitsMatrix:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValidationError(f"{name} must be an N x K matrix, got shape {z.shape}")
    n, k = z.shape
    if n < 1 or k < 2:
        raise ValidationError(f"{name} needs N >= 1 and K >= 2, got {z.shape}")
    _require_finite(z, name)
    return frozen_array(z)


def validate_labels(y, num_classes: int, num_samples: int | None = None) -> LabelVector:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"labels must be a vector, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
            raise ValidationError("labels must be integer class indices")
    y = y.astype(np.int64)
    if num_samples is not None and y.shape[0] != num_samples:
        raise ValidationError(
            f"label count {y.shape[0]} does not match sample count {num_samples}"
        )
    if np.any(y < 0) or np.any(y >= num_classes):
        bad = int(np.argmax((y < 0) | (y >= num_classes)))
        raise ValidationError(
            f"label {y[bad]} at sample {bad} is outside [0, {num_classes})"
        )
    return frozen_array(y, dtype=np.int64)


def softmax(z) -> np.ndarray:
    """Softmax along the last axis with max subtraction."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise ValidationError("softmax needs at least one class")
    _require_finite(z, "logits")
    return frozen_array(_scipy_softmax(z, axis=-1))


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"saliency map must be H x W, got shape {values.shape}")
        _require_finite(values, "saliency map")
        if self.normalized and (np.any(values < 0.0) or np.any(values > 1.0)):
            raise ValidationError("normalized saliency map has entries outside [0, 1]")
        object.__setattr__(self, "values", frozen_array(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def normalize_map(m) -> SaliencyMap:
    """Min-max rescale to [0, 1]; a constant map becomes all zeros."""
    values = m.values if isinstance(m, SaliencyMap) else SaliencyMap(m).values
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return SaliencyMap(np.zeros_like(values), normalized=True)
    return SaliencyMap((values - lo) / (hi - lo), normalized=True)


class PassKind(str, Enum):
    LOGITS = "logits"
    PROBABILITIES = "probabilities"


@dataclass(frozen=True)
class PassStack:
    """T stochastic passes (or M ensemble members) over N samples and K classes."""

    passes: np.ndarray
    kind: PassKind = PassKind.PROBABILITIES

    def __post_init__(self):
        kind = PassKind(self.kind)
        passes = np.asarray(self.passes, dtype=np.float64)
        if passes.ndim != 3:
            raise ValidationError(f"pass stack must be T x N x K, got shape {passes.shape}")
        t, n, k = passes.shape
        if t < 1:
            raise ValidationError("pass stack is empty (T = 0)")
        if n < 1 or k < 2:
            raise ValidationError(f"pass stack needs N >= 1 and K >= 2, got {passes.shape}")
        if kind is PassKind.PROBABILITIES:
            passes = validate_probabilities(passes, name="pass stack")
        else:
            _require_finite(passes, "pass stack")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "passes", frozen_array(passes))

    @classmethod
    def from_members(cls, members, kind: PassKind = PassKind.PROBABILITIES) -> "PassStack":
        """Stack ensemble member outputs (each N x K) into an M x N x K stack."""
        members = [np.asarray(m, dtype=np.float64) for m in members]
        if not members:
            raise ValidationError("pass stack is empty (T = 0)")
        shapes = {m.shape for m in members}
        if len(shapes) != 1:
            raise ValidationError(f"ensemble members disagree on shape: {sorted(shapes)}")
        return cls(np.stack(members), kind)

    @property
    def num_passes(self) -> int:
        return self.passes.shape[0]

    @property
    def num_samples(self) -> int:
        return self.passes.shape[1]

    @property
    def num_classes(self) -> int:
        return self.passes.shape[2]

    def probabilities(self) -> np.ndarray:
        if self.kind is PassKind.LOGITS:
            return softmax(self.passes)
        return self.passes

    def scaled(self, temperature: float) -> "PassStack":
        """Temperature-scale a logit stack; probability stacks are returned unchanged."""
        if self.kind is PassKind.PROBABILITIES:
            logger.warning("Temperature scaling skipped: pass stack holds probabilities")
            return self
        if not temperature > 0:
            raise ValidationError(f"temperature must be positive, got {temperature}")
        return PassStack(self.passes / temperature, PassKind.LOGITS)


def mean_probability(stack: PassStack) -> ProbabilityMatrix:
    """Per-sample arithmetic mean of the pass probabilities (N x K)."""
    if not isinstance(stack, PassStack):
        stack = PassStack(stack)
    probs = stack.probabilities()
    if np.all(probs == probs[0]):
        # identical passes: return the slice itself, bit for bit
        return frozen_array(probs[0])
    mean = probs.mean(axis=0)
    return frozen_array(mean / mean.sum(axis=-1, keepdims=True))
