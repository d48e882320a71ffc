"""LIME surrogate explanations for a black-box oracle.

Perturbations switch superpixels off by replacing them with a fill value; the
surrogate is a weighted ridge regression of the explained class probability on
the binary superpixel mask, with an unpenalised intercept.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg
from tqdm import tqdm

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import frozen_array
from uqlib.explain.segmentation import SegmentationMap
from uqlib.oracle.oracle import Oracle, predict_many

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
LOW_REPEAT = 5
Z_95 = 1.96


class FillMode(str, Enum):
    MEAN = "mean"
    ZERO = "zero"


@dataclass(frozen=True)
class LimeConfig:
    n_samples: int = 1000
    kernel_width: float = 0.25
    ridge_lambda: float = 1.0
    fill: FillMode = FillMode.MEAN
    seed: int = 0
    max_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "fill", FillMode(self.fill))
        if self.n_samples < 2:
            raise ValidationError(f"n_samples must be >= 2, got {self.n_samples}")
        if not self.kernel_width > 0:
            raise ValidationError(f"kernel_width must be positive, got {self.kernel_width}")
        if self.ridge_lambda < 0:
            raise ValidationError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")

    def with_seed(self, seed: int) -> "LimeConfig":
        return LimeConfig(
            self.n_samples, self.kernel_width, self.ridge_lambda, self.fill, seed, self.max_workers
        )


@dataclass(frozen=True)
class LimeExplanation:
    weights: np.ndarray
    intercept: float
    fidelity_r2: float
    n_samples: int
    seed: int
    explained_class: int
    residual_norm: float = 0.0

    @property
    def num_superpixels(self) -> int:
        return self.weights.shape[0]

    def top_regions(self, k: int, sign: str = "both") -> list[int]:
        """Top-k superpixels by |weight|, optionally only positive or negative evidence."""
        ids = np.arange(self.num_superpixels)
        if sign == "positive":
            ids = ids[self.weights > 0]
        elif sign == "negative":
            ids = ids[self.weights < 0]
        elif sign != "both":
            raise ValidationError(f"sign must be positive, negative or both, got {sign}")
        order = np.lexsort((ids, -np.abs(self.weights[ids])))
        return [int(i) for i in ids[order][:k]]

    def weight_map(self, seg: SegmentationMap) -> np.ndarray:
        return seg.paint(self.weights)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "fidelity_r2": self.fidelity_r2,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "explained_class": self.explained_class,
            "residual_norm": self.residual_norm,
        }


def sample_masks(rng: np.random.Generator, n_samples: int, num_superpixels: int) -> np.ndarray:
    """Bernoulli(0.5) superpixel masks; the first row keeps every superpixel."""
    masks = rng.random((n_samples, num_superpixels)) < 0.5
    masks[0] = True
    return masks


def kernel_weights(masks: np.ndarray, kernel_width: float) -> np.ndarray:
    distance = 1.0 - np.sqrt(masks.mean(axis=1))
    return np.exp(-(distance**2) / kernel_width**2)


def fill_values(image, seg: SegmentationMap, fill: FillMode) -> np.ndarray:
    """Value each switched-off superpixel is replaced with."""
    if FillMode(fill) is FillMode.MEAN:
        return seg.region_means(image)
    return np.zeros(seg.num_superpixels)


def perturb(image: np.ndarray, seg: SegmentationMap, masks: np.ndarray, fill: FillMode) -> np.ndarray:
    values = fill_values(image, seg, fill)
    return np.where(masks[:, seg.seg], image[None], values[seg.seg][None])


@dataclass(frozen=True)
class RidgeFit:
    intercept: float
    coefficients: np.ndarray
    r2: float
    residual_norm: float


def weighted_ridge(x, y, sample_weight, ridge_lambda: float) -> RidgeFit:
    """Solve (D'WD + lambda*P) beta = D'Wy with D = [1, x] and P penalising x only."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(sample_weight, dtype=np.float64)
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    weighted = design * w[:, None]
    gram = design.T @ weighted
    penalty = np.full(design.shape[1], ridge_lambda)
    penalty[0] = 0.0
    gram[np.diag_indices_from(gram)] += penalty
    rhs = weighted.T @ y
    try:
        beta = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError):
        beta = scipy.linalg.lstsq(gram, rhs)[0]
    residual = float(np.linalg.norm(gram @ beta - rhs))
    if residual > RESIDUAL_TOL:
        logger.warning(f"Weighted ridge normal-equation residual {residual:.3e} exceeds {RESIDUAL_TOL}")

    fitted = design @ beta
    total = w.sum()
    y_bar = float(w @ y / total)
    ss_tot = float(w @ (y - y_bar) ** 2)
    ss_res = float(w @ (y - fitted) ** 2)
    r2 = 1.0 if ss_tot <= 1e-15 * max(total, 1.0) else min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return RidgeFit(float(beta[0]), frozen_array(beta[1:]), r2, residual)


def _check_image(image, seg: SegmentationMap) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != seg.shape:
        raise ValidationError(f"image shape {image.shape} does not match segmentation {seg.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ValidationError("image values must be finite and lie in [0, 1]")
    return image


def lime_explain(
    image,
    oracle: Oracle,
    seg: SegmentationMap,
    class_index: int,
    config: LimeConfig = LimeConfig(),
) -> LimeExplanation:
    """Fit a local linear surrogate around ``image`` for one class."""
    image = _check_image(image, seg)
    s_count = seg.num_superpixels
    if config.n_samples < s_count + 1:
        raise ValidationError(
            f"n_samples {config.n_samples} < {s_count + 1} (superpixels + 1); surrogate is under-determined"
        )
    k = oracle.num_classes
    if k is not None and not 0 <= class_index < k:
        raise ValidationError(f"class {class_index} outside oracle's K = {k}")

    rng = np.random.default_rng(config.seed)
    masks = sample_masks(rng, config.n_samples, s_count)
    rows = predict_many(oracle, perturb(image, seg, masks, config.fill), config.max_workers)
    if not 0 <= class_index < rows.shape[1]:
        raise ValidationError(f"class {class_index} outside oracle's K = {rows.shape[1]}")

    fit = weighted_ridge(
        masks.astype(np.float64),
        rows[:, class_index],
        kernel_weights(masks, config.kernel_width),
        config.ridge_lambda,
    )
    logger.debug(
        f"LIME seed={config.seed}: {s_count} superpixels, R^2={fit.r2:.4f}, "
        f"residual={fit.residual_norm:.2e}"
    )
    return LimeExplanation(
        weights=fit.coefficients,
        intercept=fit.intercept,
        fidelity_r2=fit.r2,
        n_samples=config.n_samples,
        seed=config.seed,
        explained_class=class_index,
        residual_norm=fit.residual_norm,
    )


@dataclass(frozen=True)
class LimeStability:
    mean_weight: np.ndarray
    std_weight: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_repeats: int
    sign_agreement: np.ndarray
    seeds: tuple[int, ...] = ()
    explanations: tuple[LimeExplanation, ...] = field(default=(), repr=False)

    @property
    def low_repeat(self) -> bool:
        return self.n_repeats < LOW_REPEAT

    def excludes_zero(self) -> np.ndarray:
        return (self.ci_low > 0.0) | (self.ci_high < 0.0)


def lime_repeat(
    image,
    oracle: Oracle,
    seg: SegmentationMap,
    class_index: int,
    config: LimeConfig = LimeConfig(),
    n_repeats: int = 10,
    base_seed: int | None = None,
    vary_seed: bool = True,
    progress: bool = False,
) -> LimeStability:
    """Repeat LIME over seeds base_seed .. base_seed + n_repeats - 1.

    ``vary_seed=False`` reruns the base seed every time.
    """
    if n_repeats < 2:
        raise ValidationError(f"n_repeats must be >= 2, got {n_repeats}")
    if n_repeats < LOW_REPEAT:
        logger.warning(f"Only {n_repeats} LIME repeats; stability intervals are low-repeat")
    base = config.seed if base_seed is None else base_seed
    seeds = tuple(base + i if vary_seed else base for i in range(n_repeats))
    runs = tuple(
        lime_explain(image, oracle, seg, class_index, config.with_seed(s))
        for s in tqdm(seeds, desc="lime", disable=not progress)
    )
    weights = np.stack([r.weights for r in runs])
    if np.all(weights == weights[0]):
        mean, std = weights[0].copy(), np.zeros(weights.shape[1])
    else:
        mean = weights.mean(axis=0)
        std = weights.std(axis=0, ddof=1)
    half = Z_95 * std / math.sqrt(n_repeats)
    agreement = (np.sign(weights) == np.sign(mean)).mean(axis=0)
    return LimeStability(
        mean_weight=frozen_array(mean),
        std_weight=frozen_array(std),
        ci_low=frozen_array(mean - half),
        ci_high=frozen_array(mean + half),
        n_repeats=n_repeats,
        sign_agreement=frozen_array(agreement),
        seeds=seeds,
        explanations=runs,
    )
