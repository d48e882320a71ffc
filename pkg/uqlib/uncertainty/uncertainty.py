"""Scalar uncertainty scores from pass stacks and evidential (Dirichlet) outputs.

Entropies are in nats. Evidential outputs follow the subjective-logic mapping:
evidence e = alpha - 1, belief b = e / S, uncertainty mass u = K / S.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import entr

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import (
    PassStack,
    frozen_array,
    mean_probability,
    validate_probabilities,
)

logger = logging.getLogger(__name__)

MI_CLAMP_TOL = 1e-9
ENTROPY_TOL = 1e-9


class UncertaintySource(str, Enum):
    ENTROPY = "entropy"
    EVIDENTIAL = "evidential"


@dataclass(frozen=True)
class UncertaintyScores:
    entropy: np.ndarray
    mutual_information: np.ndarray
    disagreement: np.ndarray
    normalized: np.ndarray

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "entropy": self.entropy.tolist(),
            "mutual_information": self.mutual_information.tolist(),
            "disagreement": self.disagreement.tolist(),
            "normalized": self.normalized.tolist(),
        }


@dataclass(frozen=True)
class EvidentialOutput:
    alpha: np.ndarray
    expected_p: np.ndarray
    belief: np.ndarray
    u_mass: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.alpha.shape[1]


def predictive_entropy(p) -> np.ndarray | float:
    """Shannon entropy H(p) = -sum p ln p of each simplex row, with 0 ln 0 = 0."""
    p = validate_probabilities(p)
    k = p.shape[-1]
    h = np.clip(entr(p).sum(axis=-1), 0.0, np.log(k))
    return float(h) if np.ndim(h) == 0 else frozen_array(h)


def mutual_information(stack: PassStack) -> np.ndarray:
    """H(mean_t p_t) - mean_t H(p_t) per sample."""
    probs = stack.probabilities()
    k = stack.num_classes
    h_mean = np.clip(entr(mean_probability(stack)).sum(axis=-1), 0.0, np.log(k))
    mean_h = entr(probs).sum(axis=-1).mean(axis=0)
    mi = h_mean - mean_h
    if np.any(mi < -MI_CLAMP_TOL):
        logger.warning(
            f"Mutual information below -{MI_CLAMP_TOL} (min {mi.min():.3e}); clamping"
        )
    return frozen_array(np.clip(mi, 0.0, None))


def disagreement(stack: PassStack) -> np.ndarray:
    """1 - (plurality vote count of per-pass argmaxes) / T, ties to the lowest class."""
    votes = np.argmax(stack.probabilities(), axis=-1)  # T x N
    counts = (votes[:, :, None] == np.arange(stack.num_classes)).sum(axis=0)
    plurality = counts.max(axis=-1)
    return frozen_array(1.0 - plurality / stack.num_passes)


def evidential_map(alpha) -> EvidentialOutput:
    """Map Dirichlet concentrations (N x K, all >= 1) to beliefs and uncertainty mass."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 1:
        alpha = alpha[None, :]
    if alpha.ndim != 2 or alpha.shape[1] < 2:
        raise ValidationError(f"alpha must be N x K with K >= 2, got shape {alpha.shape}")
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("alpha contains non-finite entries")
    if np.any(alpha < 1.0):
        n, k = np.argwhere(alpha < 1.0)[0]
        raise ValidationError(
            f"alpha[{n}, {k}] = {alpha[n, k]} is below 1 (sample {n}, class {k})"
        )
    k = alpha.shape[1]
    strength = alpha.sum(axis=1, keepdims=True)
    belief = (alpha - 1.0) / strength
    u_mass = (k / strength)[:, 0]
    return EvidentialOutput(
        alpha=frozen_array(alpha),
        expected_p=frozen_array(alpha / strength),
        belief=frozen_array(belief),
        u_mass=frozen_array(u_mass),
    )


def normalize_uncertainty(entropy, num_classes: int) -> np.ndarray | float:
    """Scale entropies in [0, ln K] to [0, 1]."""
    if num_classes < 2:
        raise ValidationError(f"K must be >= 2, got {num_classes}")
    h = np.asarray(entropy, dtype=np.float64)
    log_k = np.log(num_classes)
    if not np.all(np.isfinite(h)) or np.any(h < -ENTROPY_TOL) or np.any(h > log_k + ENTROPY_TOL):
        raise ValidationError(f"entropy outside [0, ln {num_classes}]")
    u = np.clip(h / log_k, 0.0, 1.0)
    return float(u) if u.ndim == 0 else frozen_array(u)


def uncertainty_scores(
    stack: PassStack,
    source: UncertaintySource = UncertaintySource.ENTROPY,
    evidential: EvidentialOutput | None = None,
) -> UncertaintyScores:
    """All per-sample scores of a stack; ``source`` picks what feeds the normalized score."""
    k = stack.num_classes
    entropy = predictive_entropy(mean_probability(stack))
    entropy = np.atleast_1d(entropy)
    source = UncertaintySource(source)
    if source is UncertaintySource.EVIDENTIAL:
        if evidential is None:
            raise ValidationError("evidential uncertainty source selected without alpha")
        if evidential.u_mass.shape[0] != stack.num_samples:
            raise ValidationError("evidential output and pass stack disagree on N")
        normalized = evidential.u_mass
    else:
        normalized = normalize_uncertainty(entropy, k)
    return UncertaintyScores(
        entropy=frozen_array(entropy),
        mutual_information=mutual_information(stack),
        disagreement=disagreement(stack),
        normalized=frozen_array(np.atleast_1d(normalized)),
    )
