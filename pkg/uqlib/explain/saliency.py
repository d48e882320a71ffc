"""Explanation-uncertainty maps from stacks of stochastic saliency draws."""

import logging
from dataclasses import dataclass

import numpy as np

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import SaliencyMap, frozen_array, normalize_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SaliencyStack:
    """D normalized attribution maps of one image (D x H x W)."""

    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 3 or maps.shape[0] < 1:
            raise ValidationError(f"saliency stack must be D x H x W with D >= 1, got {maps.shape}")
        if not np.all(np.isfinite(maps)) or maps.min() < 0.0 or maps.max() > 1.0:
            raise ValidationError("saliency stack entries must be normalized to [0, 1]")
        object.__setattr__(self, "maps", frozen_array(maps))

    @classmethod
    def from_maps(cls, maps) -> "SaliencyStack":
        """Stack maps, min-max normalizing any that are not flagged normalized."""
        ingested = []
        for m in maps:
            if not isinstance(m, SaliencyMap):
                m = SaliencyMap(m)
            ingested.append(m if m.normalized else normalize_map(m))
        if not ingested:
            raise ValidationError("saliency stack is empty")
        shapes = {m.shape for m in ingested}
        if len(shapes) != 1:
            raise ValidationError(f"saliency maps disagree on shape: {sorted(shapes)}")
        return cls(np.stack([m.values for m in ingested]))

    @classmethod
    def from_tensor(cls, tensor, normalized: bool = False) -> "SaliencyStack":
        tensor = np.asarray(tensor, dtype=np.float64)
        if tensor.ndim != 3:
            raise ValidationError(f"saliency tensor must be D x H x W, got {tensor.shape}")
        return cls.from_maps(SaliencyMap(t, normalized=normalized) for t in tensor)

    @property
    def num_draws(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]


@dataclass(frozen=True)
class ExplanationUncertainty:
    mean_map: SaliencyMap
    variance_map: np.ndarray
    n_draws: int
    single_draw: bool = False

    def summary(self) -> dict:
        return {
            "n_draws": self.n_draws,
            "single_draw": self.single_draw,
            "mean_variance": float(self.variance_map.mean()),
            "max_variance": float(self.variance_map.max()),
        }


def aggregate_explanations(stack: SaliencyStack) -> ExplanationUncertainty:
    """Per-pixel mean and sample variance (denominator D - 1) over the draws."""
    if not isinstance(stack, SaliencyStack):
        stack = SaliencyStack.from_maps(stack)
    maps = stack.maps
    d = stack.num_draws
    if d == 1:
        logger.warning("Single saliency draw; explanation variance reported as zero")
        return ExplanationUncertainty(
            SaliencyMap(maps[0], normalized=True), frozen_array(np.zeros(stack.shape)), 1, True
        )
    if np.all(maps == maps[0]):
        mean, variance = maps[0], np.zeros(stack.shape)
    else:
        # sorting along D makes the reductions independent of draw order
        ordered = np.sort(maps, axis=0)
        mean = np.clip(ordered.mean(axis=0), 0.0, 1.0)
        variance = np.maximum(ordered.var(axis=0, ddof=1), 0.0)
    return ExplanationUncertainty(SaliencyMap(mean, normalized=True), frozen_array(variance), d)


def reliability_weighted_map(s: SaliencyMap, u_tilde: float) -> SaliencyMap:
    """(1 - u) * S for a normalized map and a scalar normalized uncertainty u."""
    if not isinstance(s, SaliencyMap) or not s.normalized:
        raise ValidationError("reliability weighting needs a normalized SaliencyMap")
    u_tilde = float(u_tilde)
    if not 0.0 <= u_tilde <= 1.0:
        raise ValidationError(f"normalized uncertainty must lie in [0, 1], got {u_tilde}")
    return SaliencyMap((1.0 - u_tilde) * s.values, normalized=True)
