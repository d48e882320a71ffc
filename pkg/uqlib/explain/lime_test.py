import numpy as np
import pytest

from uqlib.core.errors import OracleError, ValidationError
from uqlib.explain.lime import (
    FillMode,
    LimeConfig,
    kernel_weights,
    lime_explain,
    fill_values,
    lime_repeat,
    perturb,
    sample_masks,
    weighted_ridge,
)
from uqlib.explain.segmentation import grid_superpixels
from uqlib.oracle.oracle import ConstantOracle, LinearMaskOracle, Oracle, PlantedOracle


trials = list(range(100))
PLANTED = 3


@pytest.fixture
def seg():
    return grid_superpixels(16, 16, 4)


@pytest.fixture
def image():
    return np.random.default_rng(1234).random((16, 16))


def planted_oracle(seg):
    return PlantedOracle(seg.seg, superpixel=PLANTED, class_index=1, num_classes=3)


class FailingOracle(Oracle):
    batch_limit = 100

    def __init__(self, fail_on: int):
        self.fail_on = fail_on
        self.calls = 0

    @property
    def num_classes(self):
        return 2

    def _predict(self, batch):
        self.calls += 1
        if self.calls == self.fail_on:
            raise RuntimeError("scanner offline")
        return np.full((batch.shape[0], 2), 0.5)


def test_first_mask_keeps_everything():
    masks = sample_masks(np.random.default_rng(0), 50, 7)
    assert masks[0].all()
    assert masks.shape == (50, 7)


def test_kernel_weights():
    masks = np.array([[True, True, True, True], [True, False, False, False], [False] * 4])
    w = kernel_weights(masks, 0.25)
    assert w[0] == 1.0
    assert w[1] == pytest.approx(np.exp(-0.25 / 0.0625))
    assert w[2] == pytest.approx(np.exp(-16.0))


def test_perturb_fills(seg, image):
    masks = np.ones((2, seg.num_superpixels), dtype=bool)
    masks[1, 0] = False
    out = perturb(image, seg, masks, FillMode.MEAN)
    assert np.array_equal(out[0], image)
    region = seg.seg == 0
    assert np.allclose(out[1][region], image[region].mean())
    zero = perturb(image, seg, masks, FillMode.ZERO)
    assert np.all(zero[1][region] == 0.0)


def test_weighted_ridge_recovers_exact_linear_model():
    rng = np.random.default_rng(5)
    x = (rng.random((300, 6)) < 0.5).astype(float)
    coef = np.array([0.3, -0.1, 0.05, 0.2, 0.0, -0.25])
    y = 0.4 + x @ coef
    w = rng.random(300) + 0.1
    fit = weighted_ridge(x, y, w, 0.0)
    assert np.allclose(fit.coefficients, coef, atol=1e-9)
    assert fit.intercept == pytest.approx(0.4, abs=1e-9)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.residual_norm <= 1e-8


def test_weighted_ridge_matches_closed_form():
    rng = np.random.default_rng(6)
    x = (rng.random((200, 5)) < 0.5).astype(float)
    y = rng.random(200)
    w = rng.random(200)
    fit = weighted_ridge(x, y, w, 1.0)
    d = np.hstack([np.ones((200, 1)), x])
    penalty = np.diag([0.0, 1, 1, 1, 1, 1])
    beta = np.linalg.inv(d.T @ np.diag(w) @ d + penalty) @ d.T @ np.diag(w) @ y
    assert np.allclose(np.r_[fit.intercept, fit.coefficients], beta, atol=1e-10)
    assert 0.0 <= fit.r2 <= 1.0


def test_constant_oracle_has_no_signal(seg, image):
    oracle = ConstantOracle([0.2, 0.5, 0.3])
    explanation = lime_explain(image, oracle, seg, 1, LimeConfig(seed=3))
    assert np.all(np.abs(explanation.weights) <= 1e-6)
    assert explanation.intercept == pytest.approx(0.5)
    assert explanation.fidelity_r2 == 1.0


def test_planted_superpixel_dominates(seg, image):
    oracle = planted_oracle(seg)
    hits = 0
    for seed in trials:
        weights = lime_explain(image, oracle, seg, 1, LimeConfig(seed=seed)).weights
        if int(np.argmax(np.abs(weights))) == PLANTED and weights[PLANTED] > 0:
            hits += 1
    assert hits >= 95


def test_planted_with_zero_fill(seg, image):
    explanation = lime_explain(image, planted_oracle(seg), seg, 1, LimeConfig(fill="zero", seed=9))
    assert explanation.top_regions(1) == [PLANTED]
    assert explanation.top_regions(1, sign="positive") == [PLANTED]
    assert PLANTED not in explanation.top_regions(3, sign="negative")


def flat_planted_image(seg):
    image = np.full((16, 16), 0.2)
    image[seg.seg == PLANTED] = 0.9
    return image


def test_fill_values_per_mode(seg, image):
    assert np.allclose(fill_values(image, seg, FillMode.MEAN), seg.region_means(image))
    assert np.all(fill_values(image, seg, FillMode.ZERO) == 0.0)


def test_flat_planted_region_with_fill_aware_oracle(seg):
    image = flat_planted_image(seg)
    oracle = PlantedOracle(
        seg.seg,
        superpixel=PLANTED,
        class_index=1,
        num_classes=3,
        fill_values=fill_values(image, seg, FillMode.ZERO),
    )
    explanation = lime_explain(image, oracle, seg, 1, LimeConfig(fill="zero", seed=5))
    assert explanation.top_regions(1, sign="positive") == [PLANTED]
    assert explanation.weights[PLANTED] > 0.5


def test_linear_oracle_ranking():
    seg = grid_superpixels(16, 16, 8)
    image = np.random.default_rng(2).random((16, 16))
    coef = np.array([0.05, 0.3, 0.15, 0.4])
    oracle = LinearMaskOracle(seg.seg, coef, intercept=0.0, class_index=0, num_classes=2)
    explanation = lime_explain(image, oracle, seg, 0, LimeConfig(seed=0))
    assert np.argsort(explanation.weights).tolist() == np.argsort(coef).tolist()
    exact = lime_explain(image, oracle, seg, 0, LimeConfig(seed=0, ridge_lambda=0.0))
    assert np.allclose(exact.weights, coef, atol=1e-9)


def test_bit_reproducible(seg, image):
    oracle = planted_oracle(seg)
    first = lime_explain(image, oracle, seg, 1, LimeConfig(seed=42))
    second = lime_explain(image, oracle, seg, 1, LimeConfig(seed=42, max_workers=4))
    assert np.array_equal(first.weights, second.weights)
    assert first.intercept == second.intercept


def test_weight_map(seg, image):
    explanation = lime_explain(image, planted_oracle(seg), seg, 1, LimeConfig(seed=1))
    painted = explanation.weight_map(seg)
    assert painted.shape == (16, 16)
    assert painted[0, 12] == explanation.weights[PLANTED]


def test_under_determined_fit(seg, image):
    with pytest.raises(ValidationError):
        lime_explain(image, planted_oracle(seg), seg, 1, LimeConfig(n_samples=16))


def test_oracle_failure_reports_batch(seg, image):
    with pytest.raises(OracleError) as info:
        lime_explain(image, FailingOracle(fail_on=2), seg, 0, LimeConfig(n_samples=300))
    assert info.value.batch_index == 1
    assert "batch 1" in str(info.value)


def test_image_out_of_range(seg):
    with pytest.raises(ValidationError):
        lime_explain(np.full((16, 16), 1.5), ConstantOracle([0.5, 0.5]), seg, 0)


def test_repeat_identical_seeds_collapse(seg, image):
    stability = lime_repeat(
        image, planted_oracle(seg), seg, 1, LimeConfig(n_samples=200), n_repeats=3, vary_seed=False
    )
    assert np.all(stability.std_weight == 0.0)
    assert np.array_equal(stability.ci_low, stability.mean_weight)
    assert np.array_equal(stability.ci_high, stability.mean_weight)
    assert stability.seeds == (0, 0, 0)


def test_repeat_minimal_is_low_repeat(seg, image, caplog):
    with caplog.at_level("WARNING"):
        stability = lime_repeat(
            image, planted_oracle(seg), seg, 1, LimeConfig(n_samples=200), n_repeats=2, base_seed=7
        )
    assert stability.low_repeat
    assert stability.seeds == (7, 8)
    assert np.all(stability.ci_low <= stability.mean_weight)
    assert np.all(stability.mean_weight <= stability.ci_high)
    assert "low-repeat" in caplog.text


def test_repeat_rejects_single_run(seg, image):
    with pytest.raises(ValidationError):
        lime_repeat(image, planted_oracle(seg), seg, 1, n_repeats=1)


@pytest.mark.slow
def test_planted_interval_excludes_zero(seg, image):
    oracle = planted_oracle(seg)
    hits = 0
    for trial in trials:
        stability = lime_repeat(
            image, oracle, seg, 1, LimeConfig(n_samples=300), n_repeats=10, base_seed=10 * trial
        )
        hits += bool(stability.excludes_zero()[PLANTED])
        assert stability.sign_agreement[PLANTED] == 1.0
    assert hits >= 95
