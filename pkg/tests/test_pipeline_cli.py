"""
End-to-end tests for the plane-uq command line pipeline.

These tests drive ``plane_uq.cli.main`` the way a user would:
1. Synthetic fixtures are deterministic per seed
2. Temperature calibration recovers the planted miscalibration
3. The leakage guard refuses overlapping splits without writing artifacts
4. Reports carry every reporting category and validate against the schema
5. Conformal coverage and selective decisions on exchangeable fixtures
6. Explanation bundles recover the planted superpixel
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import uqlib
from plane_uq.cli import main
from plane_uq.models import ReportModel
from plane_uq.tensor_io import Manifest, Splits, read_manifest
from uqlib.core import PassKind, PassStack, read_tensor, softmax, write_tensor
from uqlib.uncertainty import mutual_information

CATEGORIES = ["accuracy", "calibration", "selective_prediction", "explainability", "workflow"]
PROJECT_ROOT = str(Path(uqlib.__file__).resolve().parents[1])


def run(*argv) -> int:
    return main([str(a) for a in argv])


def synth(out: Path, seed: int = 0, *extra) -> Path:
    assert run("synth", "--seed", seed, "--out", out, *extra) == 0
    return out


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def score_args(fixture: Path, kind: str = "logits") -> list:
    return [
        f"--{kind}", fixture / f"{kind}.npy" if kind != "probabilities" else fixture / "probs.npy",
        "--manifest", fixture / "manifest.csv",
        "--splits", fixture / "splits.json",
    ]


@pytest.fixture
def workdir():
    """Temporary working directory, removed after the test."""
    path = Path(tempfile.mkdtemp(prefix="plane-uq-test-"))
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


@pytest.fixture(scope="class")
def fixture_dir():
    """One default synthetic fixture shared by a test class."""
    path = Path(tempfile.mkdtemp(prefix="plane-uq-fixture-"))
    try:
        yield synth(path / "fixture", 7)
    finally:
        shutil.rmtree(path, ignore_errors=True)


def write_perfect_fixture(root: Path, n: int = 60, k: int = 3) -> Path:
    labels = np.arange(n) % k
    ids = [f"p{i:03d}" for i in range(n)]
    write_tensor(root / "probs.npy", np.eye(k)[labels])
    frame = pd.DataFrame({"sample_id": ids, "label": labels, "row": np.arange(n)})
    Manifest(frame, k).write(root / "manifest.csv")
    Splits(ids[::2], ids[1::2]).write(root / "splits.json")
    return root


class TestSynth:
    """Fixture generation."""

    def test_writes_fixture(self, workdir):
        out = synth(workdir / "fx", 3, "--n-samples", 100, "--num-classes", 4)
        for name in ["logits.npy", "logits_true.npy", "passes.npy", "images.npy",
                     "segmentation.npy", "manifest.csv", "splits.json", "truth.json"]:
            assert (out / name).is_file(), name
        assert sorted(p.name for p in (out / "oracles").iterdir()) == [f"oracle_{k}.json" for k in range(4)]
        assert (out / "manifest.csv").read_text().splitlines()[0] == "# num_classes: 4"

        manifest = read_manifest(out / "manifest.csv")
        assert manifest.num_classes == 4
        assert len(manifest.frame) == 100
        assert "vendor" in manifest.group_columns

        truth = json.loads((out / "truth.json").read_text())
        z = read_tensor(out / "logits.npy")
        assert np.allclose(z, truth["temperature"] * read_tensor(out / "logits_true.npy"))
        assert read_tensor(out / "passes.npy").shape == (10, 100, 4)

    def test_byte_identical_per_seed(self, workdir):
        first = synth(workdir / "a", 11, "--n-samples", 200)
        second = synth(workdir / "b", 11, "--n-samples", 200)
        assert tree_bytes(first) == tree_bytes(second)
        third = synth(workdir / "c", 12, "--n-samples", 200)
        assert (first / "logits.npy").read_bytes() != (third / "logits.npy").read_bytes()

    def test_seed_is_mandatory(self, workdir):
        with pytest.raises(SystemExit) as info:
            run("synth", "--out", workdir / "fx")
        assert info.value.code == 2

    def test_invalid_config_exits_2(self, workdir, capsys):
        assert run("synth", "--seed", 0, "--out", workdir / "fx", "--n-samples", 5) == 2
        assert "✗" in capsys.readouterr().out
        assert not (workdir / "fx").exists()

    def test_config_file_with_flag_override(self, workdir):
        config = workdir / "synth.json"
        config.write_text(json.dumps({"n_samples": 50, "num_classes": 3, "vendors": ["x", "y"]}))
        out = workdir / "fx"
        assert run("synth", "--seed", 0, "--out", out, "--config", config, "--num-classes", 5) == 0
        manifest = read_manifest(out / "manifest.csv")
        assert manifest.num_classes == 5
        assert set(manifest.frame["vendor"]) <= {"x", "y"}

    def test_noiseless_passes_have_zero_mutual_information(self, workdir):
        out = synth(workdir / "fx", 5, "--n-samples", 100, "--pass-noise", 0)
        stack = PassStack(read_tensor(out / "passes.npy"), PassKind.LOGITS)
        assert np.all(mutual_information(stack) <= 1e-12)


class TestCalibrate:
    """Temperature fitting and the leakage guard."""

    @pytest.mark.parametrize("c", [1.0, 2.0])
    def test_recovers_temperature(self, workdir, c):
        fx = synth(workdir / "fx", 21, "--n-samples", 5000, "--miscalibration", c)
        assert run("calibrate", "--seed", 0, "--out", workdir / "cal", *score_args(fx)) == 0
        artifact = json.loads((workdir / "cal" / "calibration.json").read_text())
        assert abs(artifact["temperature"] - c) / c <= 0.10
        assert artifact["method"] == "temperature_scaling"
        assert artifact["nll_after"] <= artifact["nll_before"]
        assert artifact["n_calibration"] == 2500
        assert "timestamp" not in json.dumps(artifact)

    def test_ece_improves_when_miscalibrated(self, workdir):
        fx = synth(workdir / "fx", 4, "--n-samples", 4000, "--miscalibration", 3.0)
        assert run("calibrate", "--seed", 0, "--out", workdir / "cal", *score_args(fx)) == 0
        artifact = json.loads((workdir / "cal" / "calibration.json").read_text())
        assert artifact["ece_after"] < artifact["ece_before"]

    def test_overlapping_splits_exit_2_without_artifact(self, workdir, capsys):
        fx = synth(workdir / "fx", 0, "--n-samples", 100)
        splits = json.loads((fx / "splits.json").read_text())
        splits["evaluation"].append(splits["calibration"][0])
        (fx / "splits.json").write_text(json.dumps(splits))
        assert run("calibrate", "--seed", 0, "--out", workdir / "cal", *score_args(fx)) == 2
        assert "leakage" in capsys.readouterr().out
        assert not (workdir / "cal" / "calibration.json").exists()

    @pytest.mark.slow
    def test_ece_improves_across_seeds(self, workdir):
        improved = 0
        for seed in range(20):
            fx = synth(workdir / f"fx{seed}", seed, "--miscalibration", 2.0)
            assert run("calibrate", "--seed", seed, "--out", workdir / f"cal{seed}", *score_args(fx)) == 0
            artifact = json.loads((workdir / f"cal{seed}" / "calibration.json").read_text())
            improved += artifact["ece_after"] <= artifact["ece_before"]
        assert improved >= 18


class TestReport:
    """Report bundle contents."""

    def report(self, fx: Path, out: Path, *extra) -> dict:
        assert run("calibrate", "--seed", 0, "--out", out, *score_args(fx)) == 0
        assert run(
            "report", "--seed", 0, "--out", out, *score_args(fx),
            "--calibration", out / "calibration.json", "--group-by", "vendor", *extra
        ) == 0
        return json.loads((out / "report.json").read_text())

    def test_bundle_contents(self, fixture_dir, workdir):
        report = self.report(fixture_dir, workdir / "run")
        for key in CATEGORIES:
            assert key in report
            assert report[key] == "out_of_scope" or isinstance(report[key], dict)
        ReportModel.model_validate(report)

        assert report["calibration"]["method"] == "temperature_scaling"
        assert report["calibration"]["after"]["ece"] <= report["calibration"]["before"]["ece"]
        assert set(report["stratified"]["groups"]) == {"vendor_a", "vendor_b", "vendor_c"}
        for group in report["stratified"]["groups"].values():
            assert "coverage" in group["conformal"]
            assert 0.0 <= group["abstention_rate"] <= 1.0
        assert set(report["explainability"]["example_cases"]) == {
            "confident_correct", "confident_incorrect", "most_uncertain"
        }
        assert report["quality_control"]["supplied"] is False
        assert report["provenance"]["seed"] == 0
        assert set(report["provenance"]["input_digests"]) == {"calibration", "manifest", "scores", "splits"}

        decisions = pd.read_csv(workdir / "run" / "decisions.csv")
        assert len(decisions) == report["accuracy"]["n_samples"]
        assert set(decisions["decision"]) <= {"accept", "escalate"}
        assert (decisions["needs_review"] == (decisions["set_size"] > 1)).all()
        counts = report["workflow"]["decisions"]
        assert counts["accept"] + counts["escalate"] == len(decisions)
        for svg in ["reliability.svg", "risk_coverage.svg"]:
            assert (workdir / "run" / svg).read_text().startswith("<svg")

    def test_exchangeable_coverage(self, workdir):
        fx = synth(workdir / "fx", 1, "--n-samples", 10000)
        report = self.report(fx, workdir / "run", "--randomized")
        assert report["conformal"]["randomized"] is True
        coverage = report["conformal"]["evaluation"]["coverage"]
        assert 0.87 <= coverage <= 0.93

    def test_deterministic_sets_by_default(self, fixture_dir, workdir):
        report = self.report(fixture_dir, workdir / "run")
        assert report["conformal"]["randomized"] is False
        assert report["provenance"]["config"]["randomized"] is False

    def test_pass_stack_input(self, fixture_dir, workdir):
        out = workdir / "run"
        assert run("report", "--seed", 0, "--out", out, *score_args(fixture_dir, "passes")) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["uncertainty"]["source"] == "pass_stack"
        assert report["uncertainty"]["num_passes"] == 10
        assert report["calibration"]["method"] == "none"
        assert report["stratified"] == "out_of_scope"
        columns = pd.read_csv(out / "decisions.csv").columns
        assert {"mutual_information", "disagreement", "u_tilde"} <= set(columns)

    def test_perfect_predictions(self, workdir):
        fx = write_perfect_fixture(workdir)
        out = workdir / "run"
        assert run("report", "--seed", 0, "--out", out, *score_args(fx, "probabilities")) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["accuracy"]["macro_f1"] == 1.0
        assert report["calibration"]["before"]["ece"] == 0.0
        assert report["calibration"]["before"]["brier"] == 0.0
        assert report["selective_prediction"]["full_coverage_risk"] == 0.0
        assert report["selective_prediction"]["policy"]["coverage"] == 1.0
        assert report["conformal"]["evaluation"]["coverage"] == 1.0

    def test_quality_column_passes_through(self, workdir):
        fx = write_perfect_fixture(workdir)
        frame = read_manifest(fx / "manifest.csv").frame
        frame["quality"] = ["good" if i % 2 else "" for i in range(len(frame))]
        Manifest(frame, 3).write(fx / "manifest.csv")
        out = workdir / "run"
        assert run("report", "--seed", 0, "--out", out, *score_args(fx, "probabilities")) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["quality_control"]["supplied"] is True
        assert report["quality_control"]["n_supplied"] == 30
        assert "quality" in pd.read_csv(out / "decisions.csv").columns

    def test_byte_identical_reruns(self, workdir):
        outs = []
        for name in ["a", "b"]:
            fx = synth(workdir / name / "fx", 9, "--n-samples", 500)
            out = workdir / name / "run"
            self.report(fx, out)
            outs.append(out)
        assert tree_bytes(outs[0]) == tree_bytes(outs[1])

    def test_foreign_calibration_artifact_refused(self, workdir):
        first = synth(workdir / "a", 1, "--n-samples", 200)
        second = synth(workdir / "b", 2, "--n-samples", 200)
        assert run("calibrate", "--seed", 0, "--out", workdir / "cal", *score_args(first)) == 0
        code = run(
            "report", "--seed", 0, "--out", workdir / "run", *score_args(second),
            "--calibration", workdir / "cal" / "calibration.json",
        )
        assert code == 2
        assert not (workdir / "run" / "report.json").exists()

    def test_missing_scores_exit_2(self, fixture_dir, workdir):
        code = run(
            "report", "--seed", 0, "--out", workdir / "run",
            "--manifest", fixture_dir / "manifest.csv", "--splits", fixture_dir / "splits.json",
        )
        assert code == 2

    def test_schema_command(self, workdir):
        assert run("schema", "--out", workdir) == 0
        schema = json.loads((workdir / "report.schema.json").read_text())
        assert schema["$id"] == "plane-uq/report/1.0"
        assert set(CATEGORIES) <= set(schema["required"])


class TestConformalAndSelect:
    """Standalone conformal and select commands."""

    def test_conformal_sets(self, fixture_dir, workdir):
        out = workdir / "conf"
        assert run("conformal", "--seed", 3, "--out", out, *score_args(fixture_dir), "--alpha", 0.2) == 0
        result = json.loads((out / "conformal.json").read_text())["conformal"]
        assert result["alpha"] == 0.2
        sets = pd.read_csv(out / "prediction_sets.csv")
        assert (sets["set_size"] >= 1).all()
        assert sets["covered"].mean() == pytest.approx(result["evaluation"]["coverage"])

    def test_deterministic_flag_is_gone(self, fixture_dir, workdir):
        with pytest.raises(SystemExit) as info:
            run("conformal", "--seed", 0, "--out", workdir / "conf", *score_args(fixture_dir), "--deterministic")
        assert info.value.code == 2

    def test_deterministic_sets_need_no_draws(self, fixture_dir, workdir):
        outs = [workdir / "a", workdir / "b"]
        for seed, out in zip([1, 2], outs):
            assert run("conformal", "--seed", seed, "--out", out, *score_args(fixture_dir)) == 0
        assert (outs[0] / "prediction_sets.csv").read_bytes() == (outs[1] / "prediction_sets.csv").read_bytes()

    def test_simulation(self, workdir):
        out = workdir / "sim"
        assert run("conformal", "--seed", 0, "--out", out, "--simulate", 3, "--sim-test", 2000, "--randomized") == 0
        result = json.loads((out / "simulation.json").read_text())
        assert result["seeds"] == [0, 1, 2]
        assert result["randomized"] is True
        assert 0.87 <= result["mean_coverage"] <= 0.93

    def test_select_target_risk(self, fixture_dir, workdir):
        out = workdir / "sel"
        assert run("select", "--seed", 0, "--out", out, *score_args(fixture_dir), "--target-risk", 0.3) == 0
        result = json.loads((out / "selective.json").read_text())
        policy = result["policy"]
        assert policy["feasible"]
        assert policy["achieved_risk"] <= 0.3
        decisions = pd.read_csv(out / "decisions.csv")
        accepted = decisions["decision"] == "accept"
        assert accepted.mean() == pytest.approx(policy["coverage"])
        # CSV floats carry 12 significant digits
        assert (decisions.loc[accepted, "confidence"] >= policy["threshold"] - 1e-9).all()
        assert (out / "risk_coverage.svg").is_file()

    def test_select_threshold_above_one_escalates_all(self, fixture_dir, workdir):
        out = workdir / "sel"
        assert run("select", "--seed", 0, "--out", out, *score_args(fixture_dir), "--threshold", 1.01) == 0
        decisions = pd.read_csv(out / "decisions.csv")
        assert (decisions["decision"] == "escalate").all()
        assert (decisions["reason"] == "low_confidence").all()


class TestExplain:
    """Explanation bundles."""

    def explain(self, fx: Path, out: Path, *extra) -> int:
        return run(
            "explain", "--seed", 0, "--out", out,
            "--images", fx / "images.npy", "--segmentation", fx / "segmentation.npy", *extra
        )

    @pytest.fixture(scope="class")
    def small_fixture(self):
        path = Path(tempfile.mkdtemp(prefix="plane-uq-explain-"))
        try:
            yield synth(path / "fx", 2, "--n-samples", 60, "--num-classes", 3)
        finally:
            shutil.rmtree(path, ignore_errors=True)

    @pytest.mark.parametrize("index", [0, 2, 4])
    def test_planted_superpixel_ranked_first(self, small_fixture, workdir, index):
        truth = json.loads((small_fixture / "truth.json").read_text())
        label = truth["image_labels"][index]
        out = workdir / "bundle"
        code = self.explain(
            small_fixture, out, "--image-index", index,
            "--oracle", small_fixture / "oracles" / f"oracle_{label}.json", "--n-repeats", 5,
        )
        assert code == 0
        weights = pd.read_csv(out / "lime_weights.csv")
        assert weights.loc[0, "superpixel"] == truth["planted_superpixels"][label]
        assert weights.loc[0, "rank"] == 1
        stability = pd.read_csv(out / "lime_stability.csv")
        assert bool(stability.loc[truth["planted_superpixels"][label], "excludes_zero"])
        summary = json.loads((out / "explanation.json").read_text())
        assert summary["class_index"] == label
        assert read_tensor(out / "explanation_mean.npy").shape == (32, 32)
        assert read_tensor(out / "explanation_variance.npy").min() >= 0.0
        assert not (out / "s_rel.npy").exists()

    def test_full_uncertainty_zeroes_reliability_map(self, small_fixture, workdir):
        out = workdir / "bundle"
        code = self.explain(
            small_fixture, out, "--oracle", small_fixture / "oracles" / "oracle_0.json",
            "--n-repeats", 3, "--u-tilde", 1.0,
        )
        assert code == 0
        assert np.all(read_tensor(out / "s_rel.npy") == 0.0)

    def test_u_from_pass_stack(self, small_fixture, workdir):
        out = workdir / "bundle"
        code = self.explain(
            small_fixture, out, "--oracle", small_fixture / "oracles" / "oracle_0.json",
            "--n-repeats", 3, "--passes", small_fixture / "passes.npy", "--sample-index", 4,
        )
        assert code == 0
        summary = json.loads((out / "explanation.json").read_text())
        assert 0.0 <= summary["u_tilde"] <= 1.0
        s_rel = read_tensor(out / "s_rel.npy")
        mean = read_tensor(out / "explanation_mean.npy")
        assert np.allclose(s_rel, (1.0 - summary["u_tilde"]) * mean)

    def test_u_from_probability_pass_stack(self, small_fixture, workdir):
        passes = read_tensor(small_fixture / "passes.npy")
        write_tensor(workdir / "pass_probs.npy", softmax(passes))
        summaries = []
        for name, path, kind in [
            ("logits", small_fixture / "passes.npy", "logits"),
            ("probs", workdir / "pass_probs.npy", "probabilities"),
        ]:
            code = self.explain(
                small_fixture, workdir / name, "--oracle", small_fixture / "oracles" / "oracle_0.json",
                "--n-repeats", 2, "--passes", path, "--pass-kind", kind, "--sample-index", 4,
            )
            assert code == 0
            summaries.append(json.loads((workdir / name / "explanation.json").read_text()))
        assert summaries[1]["u_tilde"] == pytest.approx(summaries[0]["u_tilde"], abs=1e-9)

    def test_byte_identical_bundles(self, small_fixture, workdir):
        outs = [workdir / "a", workdir / "b"]
        for out in outs:
            code = self.explain(
                small_fixture, out, "--oracle", small_fixture / "oracles" / "oracle_1.json",
                "--image-index", 2, "--n-repeats", 3, "--u-tilde", 0.25,
            )
            assert code == 0
        assert tree_bytes(outs[0]) == tree_bytes(outs[1])

    def test_external_saliency_stack(self, small_fixture, workdir):
        stack = np.random.default_rng(0).random((4, 32, 32))
        write_tensor(workdir / "saliency.npy", stack)
        out = workdir / "bundle"
        code = self.explain(
            small_fixture, out, "--oracle", small_fixture / "oracles" / "oracle_0.json",
            "--n-repeats", 2, "--saliency", workdir / "saliency.npy",
        )
        assert code == 0
        summary = json.loads((out / "explanation.json").read_text())
        assert summary["explanation_uncertainty"]["n_draws"] == 4
        assert summary["low_repeat"] is True

    def test_subprocess_oracle(self, small_fixture, workdir, monkeypatch):
        monkeypatch.setenv("PYTHONPATH", PROJECT_ROOT)
        spec = {"mode": "subprocess", "command": f"{sys.executable} -m uqlib.oracle.echo --classes 3"}
        (workdir / "oracle.json").write_text(json.dumps(spec))
        out = workdir / "bundle"
        code = run(
            "explain", "--seed", 0, "--out", out, "--images", small_fixture / "images.npy",
            "--oracle", workdir / "oracle.json", "--cell", 16, "--n-samples", 40, "--n-repeats", 2,
        )
        assert code == 0
        assert (workdir / "bundle.oracle_calls" / "call_00001.log").is_file()
        assert not any("call_" in p.name for p in out.rglob("*"))
        weights = pd.read_csv(out / "lime_weights.csv")
        assert len(weights) == 4
        assert (weights["abs_weight"] < 1e-6).all()

    def test_subprocess_bundles_independent_of_out_dir(self, small_fixture, workdir, monkeypatch):
        monkeypatch.setenv("PYTHONPATH", PROJECT_ROOT)
        spec = {"mode": "subprocess", "command": f"{sys.executable} -m uqlib.oracle.echo --classes 3"}
        (workdir / "oracle.json").write_text(json.dumps(spec))
        outs = [workdir / "first" / "bundle", workdir / "second"]
        for out in outs:
            code = run(
                "explain", "--seed", 0, "--out", out, "--images", small_fixture / "images.npy",
                "--oracle", workdir / "oracle.json", "--cell", 16, "--n-samples", 40, "--n-repeats", 2,
            )
            assert code == 0
        assert tree_bytes(outs[0]) == tree_bytes(outs[1])

    def test_oracle_failure_exits_1(self, small_fixture, workdir, monkeypatch, capsys):
        monkeypatch.setenv("PYTHONPATH", PROJECT_ROOT)
        spec = {"mode": "subprocess", "command": f"{sys.executable} -m uqlib.oracle.echo --classes 3 --fail"}
        (workdir / "oracle.json").write_text(json.dumps(spec))
        code = run(
            "explain", "--seed", 0, "--out", workdir / "bundle", "--images", small_fixture / "images.npy",
            "--oracle", workdir / "oracle.json", "--cell", 16, "--n-samples", 40, "--class", 0,
        )
        assert code == 1
        assert "transcript" in capsys.readouterr().out

    def test_bad_oracle_spec_exits_2(self, small_fixture, workdir):
        (workdir / "oracle.json").write_text(json.dumps({"mode": "builtin", "builtin_name": "gradcam"}))
        code = self.explain(small_fixture, workdir / "bundle", "--oracle", workdir / "oracle.json")
        assert code == 2
