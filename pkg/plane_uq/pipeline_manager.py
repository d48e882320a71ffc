"""
Plane UQ Pipeline Manager.
Orchestrates fixture synthesis, calibration, reporting and explanation runs over
files on disk. Command handlers in ``cli.py`` call one method per subcommand.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
import pydantic

from uqlib.calibration import apply_temperature, fit_temperature
from uqlib.conformal import simulate_coverage
from uqlib.core import (
    PassKind,
    PassStack,
    ValidationError,
    atomic_write_text,
    mean_probability,
    softmax,
    validate_probabilities,
)
from uqlib.explain import (
    SaliencyStack,
    SegmentationMap,
    aggregate_explanations,
    fill_values,
    grid_superpixels,
    lime_repeat,
    reliability_weighted_map,
)
from uqlib.metrics import ece
from uqlib.oracle import OracleMode, OracleSpec, build_oracle, predict
from uqlib.selective import decide_all
from uqlib.uncertainty import uncertainty_scores

from .charts import risk_coverage_svg
from .models import (
    TOOL_VERSION,
    CalibrateConfig,
    CalibrationArtifact,
    ExplainConfig,
    Provenance,
    ReportConfig,
    ReportModel,
    ScoreKind,
    SynthConfig,
)
from .report import (
    CalibrationInfo,
    SplitScores,
    build_report,
    confidence_for,
    decision_table,
    fit_conformal,
    selective_policy,
    uncertainty_columns,
)
from .synth import generate_fixture, write_fixture
from .tensor_io import (
    Manifest,
    Splits,
    config_hash,
    digest_ids,
    read_json,
    read_manifest,
    read_rows,
    read_splits,
    read_tensor,
    sha256_file,
    write_csv,
    write_json,
    write_tensor,
)

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Configuration for the pipeline."""
    progress: bool = False
    # extra environment for subprocess oracles
    oracle_env: Optional[Dict[str, str]] = None


@dataclass
class ScoreSource:
    """A score tensor on disk plus how to read it."""
    kind: ScoreKind
    path: Path
    pass_kind: PassKind = PassKind.LOGITS


@dataclass
class LoadedScores:
    calibration: SplitScores
    evaluation: SplitScores
    temperature: Optional[CalibrationInfo] = None
    inputs: Dict[str, Any] = field(default_factory=dict)


class PlanePipeline:
    """File-level orchestrator for every pipeline subcommand."""

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.config = config or PipelineConfig()
        logger.debug(f"PlanePipeline initialized: {self.config}")

    # ----------------------------------------------------------------- helpers

    def provenance(
        self,
        command: str,
        seed: Optional[int],
        model: pydantic.BaseModel,
        inputs: Dict[str, Any],
    ) -> Provenance:
        return Provenance(
            tool_version=TOOL_VERSION,
            command=command,
            seed=seed,
            config_hash=config_hash(model),
            config=model.model_dump(mode="json"),
            input_digests={name: sha256_file(path) for name, path in sorted(inputs.items()) if path},
        )

    def _load_split_frames(self, manifest_path, splits_path) -> Tuple[Manifest, Splits, pd.DataFrame, pd.DataFrame]:
        manifest = read_manifest(manifest_path)
        splits = read_splits(splits_path, manifest)
        return manifest, splits, manifest.select(splits.calibration), manifest.select(splits.evaluation)

    def _read_temperature(self, path, splits: Splits) -> CalibrationInfo:
        try:
            artifact = CalibrationArtifact.model_validate(read_json(path))
        except pydantic.ValidationError as e:
            raise ValidationError(f"{path} is not a calibration artifact: {e}") from e
        if artifact.calibration_digest != digest_ids(splits.calibration):
            raise ValidationError(
                "calibration artifact was fit on a different calibration split; refusing to reuse it"
            )
        return CalibrationInfo(artifact.temperature, artifact.n_calibration, artifact.calibration_digest)

    def _split_scores(
        self,
        source: ScoreSource,
        frame: pd.DataFrame,
        temperature: Optional[float],
        group_by: Optional[str],
    ) -> SplitScores:
        rows = frame["row"].to_numpy()
        labels = frame["label"].to_numpy().astype(np.int64)
        raw = None
        stack = None
        if source.kind is ScoreKind.PROBABILITIES:
            probabilities = validate_probabilities(read_rows(source.path, rows))
            if temperature is not None:
                logger.warning("Calibration artifact ignored: scores are already probabilities")
        elif source.kind is ScoreKind.LOGITS:
            logits = read_rows(source.path, rows)
            probabilities = softmax(logits)
            if temperature is not None:
                raw, probabilities = probabilities, apply_temperature(logits, temperature)
        else:
            stack = PassStack(read_rows(source.path, rows, axis=1), source.pass_kind)
            probabilities = mean_probability(stack)
            if temperature is not None and stack.kind is PassKind.LOGITS:
                stack = stack.scaled(temperature)
                raw, probabilities = probabilities, mean_probability(stack)
        if probabilities.ndim != 2 or probabilities.shape[0] != len(frame):
            raise ValidationError(f"{source.path} does not hold one N x K score row per sample")
        groups = None
        if group_by is not None:
            if group_by not in frame.columns:
                raise ValidationError(f"manifest has no column '{group_by}' to group by")
            groups = frame[group_by].astype(str).to_numpy()
        quality = frame["quality"].astype(str).to_numpy() if "quality" in frame.columns else None
        return SplitScores(
            sample_ids=frame["sample_id"].tolist(),
            labels=labels,
            probabilities=np.asarray(probabilities),
            raw_probabilities=None if raw is None else np.asarray(raw),
            stack=stack,
            groups=groups,
            quality=quality,
        )

    def load_scores(
        self,
        source: ScoreSource,
        manifest_path,
        splits_path,
        calibration_path=None,
        group_by: Optional[str] = None,
    ) -> LoadedScores:
        manifest, splits, cal_frame, eval_frame = self._load_split_frames(manifest_path, splits_path)
        info = None if calibration_path is None else self._read_temperature(calibration_path, splits)
        t = None if info is None else info.temperature
        calibration = self._split_scores(source, cal_frame, t, None)
        evaluation = self._split_scores(source, eval_frame, t, group_by)
        manifest.check_num_classes(evaluation.num_classes)
        inputs = {
            "scores": source.path,
            "manifest": manifest_path,
            "splits": splits_path,
            "calibration": calibration_path,
        }
        return LoadedScores(calibration, evaluation, info, inputs)

    # ---------------------------------------------------------------- commands

    def synth(self, config: SynthConfig, seed: int, out) -> Dict[str, Path]:
        fixture = generate_fixture(config, seed)
        return write_fixture(fixture, out)

    def calibrate(
        self, config: CalibrateConfig, seed: int, out, logits_path, manifest_path, splits_path
    ) -> CalibrationArtifact:
        """Fit T* on the calibration split; ECE before/after is measured on the evaluation split."""
        manifest, splits, cal_frame, eval_frame = self._load_split_frames(manifest_path, splits_path)
        z_cal = read_rows(logits_path, cal_frame["row"].to_numpy())
        z_eval = read_rows(logits_path, eval_frame["row"].to_numpy())
        manifest.check_num_classes(z_cal.shape[1])
        y_cal = cal_frame["label"].to_numpy()
        y_eval = eval_frame["label"].to_numpy()

        fit = fit_temperature(z_cal, y_cal, t_min=config.t_min, t_max=config.t_max)
        ece_before, _ = ece(softmax(z_eval), y_eval, config.bins)
        ece_after, _ = ece(fit.apply(z_eval), y_eval, config.bins)
        artifact = CalibrationArtifact(
            temperature=fit.temperature,
            nll_before=fit.nll_before,
            nll_after=fit.nll_after,
            ece_before=ece_before,
            ece_after=ece_after,
            bins=config.bins,
            n_calibration=fit.n_samples,
            calibration_digest=digest_ids(splits.calibration),
            search_trace=[[t, v] for t, v in fit.search_trace],
            provenance=self.provenance(
                "calibrate",
                seed,
                config,
                {"logits": logits_path, "manifest": manifest_path, "splits": splits_path},
            ),
        )
        write_json(Path(out) / "calibration.json", artifact.model_dump(mode="json"))
        return artifact

    def report(
        self,
        config: ReportConfig,
        seed: int,
        out,
        source: ScoreSource,
        manifest_path,
        splits_path,
        calibration_path=None,
    ) -> ReportModel:
        loaded = self.load_scores(source, manifest_path, splits_path, calibration_path, config.group_by)
        bundle = build_report(loaded.calibration, loaded.evaluation, config, seed, loaded.temperature)
        report = ReportModel.model_validate(
            {**bundle.report, "provenance": self.provenance("report", seed, config, loaded.inputs)}
        )
        out = Path(out)
        write_json(out / "report.json", report.model_dump(mode="json"))
        atomic_write_text(out / "reliability.svg", bundle.reliability_svg)
        atomic_write_text(out / "risk_coverage.svg", bundle.risk_coverage_svg)
        write_csv(out / "decisions.csv", bundle.decisions)
        return report

    def conformal(
        self,
        config: ReportConfig,
        seed: int,
        out,
        source: ScoreSource,
        manifest_path,
        splits_path,
        calibration_path=None,
    ) -> Dict[str, Any]:
        loaded = self.load_scores(source, manifest_path, splits_path, calibration_path)
        section, sets = fit_conformal(loaded.calibration, loaded.evaluation, config, seed)
        evaluation = loaded.evaluation
        frame = pd.DataFrame(
            {
                "sample_id": evaluation.sample_ids,
                "label": evaluation.labels,
                "set_size": [s.size for s in sets],
                "prediction_set": [";".join(str(m) for m in s.members) for s in sets],
                "covered": [int(y) in s for s, y in zip(sets, evaluation.labels)],
            }
        )
        result = {
            "conformal": section,
            "provenance": self.provenance("conformal", seed, config, loaded.inputs).model_dump(mode="json"),
        }
        out = Path(out)
        write_json(out / "conformal.json", result)
        write_csv(out / "prediction_sets.csv", frame)
        return result

    def simulate(
        self, config: ReportConfig, seed: int, out, n_seeds: int, num_classes: int, n_cal: int, n_test: int
    ) -> Dict[str, Any]:
        """Exchangeable-draw coverage experiment over seeds seed .. seed + n_seeds - 1."""
        reports = simulate_coverage(
            range(seed, seed + n_seeds),
            alpha=config.alpha,
            n_cal=n_cal,
            n_test=n_test,
            num_classes=num_classes,
            randomized=config.randomized,
            progress=self.config.progress,
        )
        coverage = [r.coverage for r in reports]
        result = {
            "alpha": config.alpha,
            "randomized": config.randomized,
            "num_classes": num_classes,
            "n_cal": n_cal,
            "n_test": n_test,
            "seeds": list(range(seed, seed + n_seeds)),
            "coverage": coverage,
            "mean_coverage": float(np.mean(coverage)),
            "mean_set_size": float(np.mean([r.mean_size for r in reports])),
            "provenance": self.provenance("conformal", seed, config, {}).model_dump(mode="json"),
        }
        write_json(Path(out) / "simulation.json", result)
        return result

    def select(
        self,
        config: ReportConfig,
        seed: int,
        out,
        source: ScoreSource,
        manifest_path,
        splits_path,
        calibration_path=None,
    ) -> Dict[str, Any]:
        loaded = self.load_scores(source, manifest_path, splits_path, calibration_path)
        evaluation = loaded.evaluation
        columns = uncertainty_columns(evaluation)
        confidence = confidence_for(evaluation, config, columns["u_tilde"])
        prediction = np.argmax(evaluation.probabilities, axis=1)
        correct = prediction == evaluation.labels
        curve, policy = selective_policy(confidence, correct, config)
        records = decide_all(confidence, policy)
        result = {
            "confidence_source": config.confidence_source.value,
            "policy": policy.to_dict(),
            "curve": curve.to_dict(),
            "provenance": self.provenance("select", seed, config, loaded.inputs).model_dump(mode="json"),
        }
        out = Path(out)
        write_json(out / "selective.json", result)
        write_csv(
            out / "decisions.csv",
            decision_table(evaluation, prediction, correct, records, None, columns, config),
        )
        atomic_write_text(out / "risk_coverage.svg", risk_coverage_svg(curve, policy))
        return result

    def explain(
        self,
        config: ExplainConfig,
        seed: int,
        out,
        images_path,
        oracle_path,
        segmentation_path=None,
        saliency_path=None,
        passes_path=None,
        sample_index: Optional[int] = None,
        pass_kind: PassKind = PassKind.LOGITS,
    ) -> Dict[str, Any]:
        out = Path(out)
        images = read_tensor(images_path)
        if images.ndim == 2:
            images = images[None]
        if images.ndim != 3 or not 0 <= config.image_index < images.shape[0]:
            raise ValidationError(f"image index {config.image_index} outside images of shape {images.shape}")
        image = images[config.image_index].astype(np.float64)

        if segmentation_path is not None:
            seg = SegmentationMap(read_tensor(segmentation_path, integer=True))
        else:
            seg = grid_superpixels(image.shape[0], image.shape[1], config.cell)

        try:
            spec = OracleSpec.model_validate(read_json(oracle_path))
        except pydantic.ValidationError as e:
            raise ValidationError(f"{oracle_path} is not an oracle spec: {e}") from e
        workdir = None
        if spec.mode is OracleMode.SUBPROCESS:
            # transcripts carry absolute paths, so they stay out of the bundle
            resolved = out.resolve()
            workdir = resolved.parent / f"{resolved.name}.oracle_calls"
            logger.info(f"Oracle call transcripts in {workdir}")
        oracle = build_oracle(
            spec,
            segmentation=seg,
            workdir=workdir,
            env=self.config.oracle_env,
            fill_values=fill_values(image, seg, config.lime.fill),
        )

        class_index = config.class_index
        if class_index is None:
            class_index = int(np.argmax(predict(oracle, image[None])[0]))
            logger.info(f"Explaining oracle top class {class_index}")

        stability = lime_repeat(
            image,
            oracle,
            seg,
            class_index,
            config.lime.to_config(seed),
            n_repeats=config.lime.n_repeats,
            base_seed=seed,
            progress=self.config.progress,
        )

        if saliency_path is not None:
            stack = SaliencyStack.from_tensor(read_tensor(saliency_path))
        else:
            stack = SaliencyStack.from_tensor(np.stack([e.weight_map(seg) for e in stability.explanations]))
        uncertainty = aggregate_explanations(stack)

        u_tilde = config.u_tilde
        if u_tilde is None and passes_path is not None:
            if sample_index is None:
                raise ValidationError("--passes needs --sample-index to pick the explained sample")
            passes = read_rows(passes_path, np.array([sample_index]), axis=1)
            u_tilde = float(uncertainty_scores(PassStack(passes, PassKind(pass_kind))).normalized[0])

        mean = stability.mean_weight
        # ranked by |mean weight|, ties to the lower superpixel id
        order = np.lexsort((np.arange(mean.size), -np.abs(mean)))
        weights = pd.DataFrame(
            {
                "rank": np.arange(1, mean.size + 1),
                "superpixel": order,
                "weight": mean[order],
                "abs_weight": np.abs(mean[order]),
            }
        )
        stability_frame = pd.DataFrame(
            {
                "superpixel": np.arange(mean.size),
                "mean_weight": mean,
                "std_weight": stability.std_weight,
                "ci_low": stability.ci_low,
                "ci_high": stability.ci_high,
                "sign_agreement": stability.sign_agreement,
                "excludes_zero": stability.excludes_zero(),
            }
        )
        write_csv(out / "lime_weights.csv", weights)
        write_csv(out / "lime_stability.csv", stability_frame)
        write_tensor(out / "explanation_mean.npy", uncertainty.mean_map.values)
        write_tensor(out / "explanation_variance.npy", uncertainty.variance_map)
        if u_tilde is not None:
            write_tensor(out / "s_rel.npy", reliability_weighted_map(uncertainty.mean_map, u_tilde).values)

        first = stability.explanations[0]
        summary = {
            "image_index": config.image_index,
            "class_index": class_index,
            "num_superpixels": seg.num_superpixels,
            "seeds": list(stability.seeds),
            "low_repeat": stability.low_repeat,
            "top_regions": {
                "positive": first.top_regions(3, sign="positive"),
                "negative": first.top_regions(3, sign="negative"),
                "by_mean_weight": order[:3].tolist(),
            },
            "fidelity_r2": [e.fidelity_r2 for e in stability.explanations],
            "explanation_uncertainty": uncertainty.summary(),
            "u_tilde": u_tilde,
            "reliability_weighted": u_tilde is not None,
            "provenance": self.provenance(
                "explain",
                seed,
                config,
                {
                    "images": images_path,
                    "oracle": oracle_path,
                    "segmentation": segmentation_path,
                    "saliency": saliency_path,
                    "passes": passes_path,
                },
            ).model_dump(mode="json"),
        }
        write_json(out / "explanation.json", summary)
        return summary
