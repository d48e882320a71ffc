import numpy as np
import pytest

from uqlib.core.errors import ValidationError
from uqlib.core.simplex import softmax
from uqlib.metrics.metrics import (
    brier,
    classification_report,
    ece,
    stratified_report,
)


epochs = 2**5
seeds = list(range(epochs))


@pytest.fixture
def rng(seed):
    return np.random.default_rng(seed)


def random_instance(rng, n=None, k=None):
    n = int(rng.integers(1, 60)) if n is None else n
    k = int(rng.integers(2, 7)) if k is None else k
    p = softmax(rng.normal(0.0, 2.0, size=(n, k)))
    y = rng.integers(0, k, size=n)
    return p, y


def naive_ece(p, y, bins):
    conf = p.max(axis=1)
    correct = np.argmax(p, axis=1) == y
    total = 0.0
    for b in range(bins):
        lo, hi = b / bins, (b + 1) / bins
        members = [
            i for i in range(len(conf))
            if (lo <= conf[i] < hi) or (b == bins - 1 and conf[i] == 1.0)
        ]
        if not members:
            continue
        acc = sum(correct[i] for i in members) / len(members)
        avg = sum(conf[i] for i in members) / len(members)
        total += len(members) / len(conf) * abs(acc - avg)
    return total


def test_ece_perfect_calibration():
    p = np.tile([0.6, 0.4], (10, 1))
    y = np.array([0] * 6 + [1] * 4)
    value, _ = ece(p, y)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_ece_maximal_miscalibration():
    p = np.tile([0.0, 1.0, 0.0], (7, 1))
    value, table = ece(p, np.zeros(7, dtype=int))
    assert value == 1.0
    assert table.count[-1] == 7


def test_ece_matches_naive_binning():
    rng = np.random.default_rng(200)
    p, y = random_instance(rng, n=200, k=5)
    for bins in (1, 10, 15, 23):
        value, _ = ece(p, y, bins)
        assert value == pytest.approx(naive_ece(p, y, bins), abs=1e-12)


def test_reliability_bins_mark_empty_bins_absent():
    p = np.tile([0.95, 0.05], (4, 1))
    _, table = ece(p, np.array([0, 0, 1, 0]), bins=10)
    assert table.count.sum() == 4
    assert np.isnan(table.accuracy[0])
    assert np.isnan(table.mean_confidence[3])
    assert table.to_dict()["accuracy"][0] is None
    assert table.accuracy[-1] == 0.75


@pytest.mark.parametrize("seed", seeds)
def test_ece_permutation_invariant(rng):
    p, y = random_instance(rng, n=80)
    order = rng.permutation(80)
    assert ece(p, y)[0] == pytest.approx(ece(p[order], y[order])[0], abs=1e-12)


def test_ece_rejects_bad_input():
    p = np.tile([0.5, 0.5], (3, 1))
    with pytest.raises(ValidationError):
        ece(p, [0, 1])
    with pytest.raises(ValidationError):
        ece(p, [0, 1, 0], bins=0)


def test_brier_reference_values():
    eye = np.eye(6)
    assert brier(eye, np.arange(6)) == 0.0
    assert brier(eye, (np.arange(6) + 1) % 6) == 2.0
    assert brier(np.full((3, 6), 1 / 6), [0, 1, 2]) == pytest.approx(5 / 6, abs=1e-12)


def test_bounds_suite():
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        p, y = random_instance(rng)
        value, table = ece(p, y)
        assert 0.0 <= value <= 1.0
        assert table.count.sum() == p.shape[0]
        assert 0.0 <= brier(p, y) <= 2.0
        report = classification_report(p, y)
        for rates in (report.per_class_sensitivity, report.per_class_specificity):
            present = rates[~np.isnan(rates)]
            assert np.all((present >= 0.0) & (present <= 1.0))
        assert 0.0 <= report.macro_f1 <= 1.0
        assert 0.0 <= report.top1_accuracy <= 1.0


def test_classification_report_perfect():
    p = np.eye(4)[[0, 1, 2, 3, 1, 2]]
    report = classification_report(p, [0, 1, 2, 3, 1, 2])
    assert report.macro_f1 == 1.0
    assert np.array_equal(report.confusion, np.diag([1, 2, 2, 1]))


def test_classification_report_binary_all_zero():
    p = np.tile([0.9, 0.1], (4, 1))
    report = classification_report(p, [0, 0, 1, 1])
    assert report.per_class_f1.tolist() == pytest.approx([2 / 3, 0.0])
    assert report.macro_f1 == pytest.approx(1 / 3)
    assert report.per_class_sensitivity.tolist() == [1.0, 0.0]
    assert report.per_class_specificity.tolist() == [0.0, 1.0]
    assert report.top1_accuracy == 0.5


def test_classification_report_ties_to_lowest_index():
    report = classification_report([[0.5, 0.5]], [0])
    assert report.confusion.tolist() == [[1, 0], [0, 0]]


def test_classification_report_absent_class(caplog):
    p = np.eye(3)[[0, 0, 1]]
    with caplog.at_level("WARNING"):
        report = classification_report(p, [0, 0, 1])
    assert report.absent_classes == (2,)
    assert np.isnan(report.per_class_sensitivity[2])
    assert report.macro_f1 == 1.0
    assert "absent" in caplog.text


@pytest.mark.parametrize("seed", seeds)
def test_confusion_partitions_samples(rng):
    p, y = random_instance(rng)
    assert classification_report(p, y).confusion.sum() == p.shape[0]


def test_stratified_single_group_matches_pooled():
    p, y = random_instance(np.random.default_rng(3), n=40, k=4)
    strata = stratified_report(p, y, ["site-a"] * 40)
    pooled = classification_report(p, y)
    only = strata["site-a"]
    assert np.array_equal(only.report.confusion, pooled.confusion)
    assert only.ece == ece(p, y)[0]
    assert only.brier == brier(p, y)


def test_stratified_constructed_accuracies():
    p = np.eye(2)[[0, 1, 0, 1, 0, 0, 0, 0]]
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    groups = ["a"] * 4 + ["b"] * 4
    strata = stratified_report(p, y, groups)
    assert list(strata) == ["a", "b"]
    assert strata["a"].report.top1_accuracy == 1.0
    assert strata["b"].report.top1_accuracy == 0.5
    assert strata["a"].low_support and strata["b"].low_support


@pytest.mark.parametrize("seed", seeds)
def test_stratified_pooling_identity(rng):
    p, y = random_instance(rng, n=120)
    groups = rng.choice(["ge", "philips", "siemens"], size=120)
    strata = stratified_report(p, y, groups)
    weighted = sum(s.n_samples * s.report.top1_accuracy for s in strata.values()) / 120
    assert weighted == pytest.approx(classification_report(p, y).top1_accuracy, abs=1e-12)
    merged = sum(s.report.confusion for s in strata.values())
    assert np.array_equal(merged, classification_report(p, y).confusion)


def test_stratified_rejects_length_mismatch():
    p, y = random_instance(np.random.default_rng(0), n=5, k=3)
    with pytest.raises(ValidationError):
        stratified_report(p, y, ["a"] * 4)
