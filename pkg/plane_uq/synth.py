"""
Synthetic fixture generator.

Labels are drawn from softmax of the true logits, so the true logits are calibrated
by construction and the observed logits ``c * z`` have ideal temperature ``c``.
Images carry one bright textured superpixel per class, matched by a builtin
planted oracle spec.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from uqlib.core import softmax
from uqlib.explain import SegmentationMap, grid_superpixels
from uqlib.oracle import OracleMode, OracleSpec

from .models import SynthConfig
from .tensor_io import Manifest, Splits, write_json, write_tensor

logger = logging.getLogger(__name__)


@dataclass
class SynthFixture:
    config: SynthConfig
    seed: int
    logits_true: np.ndarray
    logits: np.ndarray
    passes: np.ndarray
    manifest: Manifest
    splits: Splits
    images: np.ndarray
    image_labels: np.ndarray
    segmentation: SegmentationMap
    planted: List[int] = field(default_factory=list)
    oracle_specs: List[OracleSpec] = field(default_factory=list)

    def truth(self) -> dict:
        return {
            "seed": self.seed,
            "temperature": self.config.miscalibration,
            "num_classes": self.config.num_classes,
            "planted_superpixels": list(self.planted),
            "image_labels": self.image_labels.tolist(),
            "config": self.config.model_dump(mode="json"),
        }


def sample_labels(rng: np.random.Generator, p: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(p, axis=1)
    y = (rng.random(p.shape[0])[:, None] >= cumulative).sum(axis=1)
    return np.minimum(y, p.shape[1] - 1)


def planted_superpixels(num_classes: int, num_superpixels: int) -> List[int]:
    if num_classes > num_superpixels:
        logger.warning(
            f"{num_classes} classes but only {num_superpixels} superpixels; planted regions repeat"
        )
    return [(k * num_superpixels) // num_classes for k in range(num_classes)]


def _images(rng: np.random.Generator, config: SynthConfig, seg: SegmentationMap, planted: List[int]):
    size = config.image_size
    labels = np.repeat(np.arange(config.num_classes), config.images_per_class)
    images = 0.1 + 0.4 * rng.random((labels.size, size, size))
    for i, k in enumerate(labels):
        region = seg.seg == planted[k]
        images[i][region] = 0.6 + 0.4 * rng.random(int(region.sum()))
    return images, labels


def generate_fixture(config: SynthConfig, seed: int) -> SynthFixture:
    """Build every fixture array in memory; deterministic per ``seed``."""
    n, k, t = config.n_samples, config.num_classes, config.num_passes
    label_rng, pass_rng, split_rng, image_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)
    )

    logits_true = label_rng.normal(0.0, config.logit_scale, size=(n, k))
    labels = sample_labels(label_rng, softmax(logits_true))
    logits = config.miscalibration * logits_true
    if config.pass_noise == 0:
        passes = np.repeat(logits[None], t, axis=0)
    else:
        passes = logits[None] + pass_rng.normal(0.0, config.pass_noise, size=(t, n, k))

    ids = [f"s{i:05d}" for i in range(n)]
    frame = pd.DataFrame(
        {
            "sample_id": ids,
            "label": labels.astype(np.int64),
            "row": np.arange(n, dtype=np.int64),
            "vendor": split_rng.choice(config.vendors, size=n),
        }
    )
    n_cal = min(max(int(round(config.calibration_fraction * n)), 1), n - 1)
    order = split_rng.permutation(n)
    splits = Splits(
        calibration=[ids[i] for i in np.sort(order[:n_cal])],
        evaluation=[ids[i] for i in np.sort(order[n_cal:])],
    )

    seg = grid_superpixels(config.image_size, config.image_size, config.cell)
    planted = planted_superpixels(k, seg.num_superpixels)
    images, image_labels = _images(image_rng, config, seg, planted)
    specs = [
        OracleSpec(
            mode=OracleMode.BUILTIN,
            builtin_name="planted",
            params={
                "superpixel": planted[c],
                "class_index": c,
                "num_classes": k,
                "cell": config.cell,
                "shape": [config.image_size, config.image_size],
            },
        )
        for c in range(k)
    ]
    logger.info(f"Generated fixture: N={n}, K={k}, T={t}, c={config.miscalibration}, seed={seed}")
    return SynthFixture(
        config=config,
        seed=seed,
        logits_true=logits_true,
        logits=logits,
        passes=passes,
        manifest=Manifest(frame, k),
        splits=splits,
        images=images,
        image_labels=image_labels,
        segmentation=seg,
        planted=planted,
        oracle_specs=specs,
    )


def write_fixture(fixture: SynthFixture, out) -> Dict[str, Path]:
    out = Path(out)
    written = {
        "logits_true": write_tensor(out / "logits_true.npy", fixture.logits_true),
        "logits": write_tensor(out / "logits.npy", fixture.logits),
        "passes": write_tensor(out / "passes.npy", fixture.passes),
        "images": write_tensor(out / "images.npy", fixture.images),
        "segmentation": write_tensor(out / "segmentation.npy", fixture.segmentation.seg),
        "manifest": fixture.manifest.write(out / "manifest.csv"),
        "splits": fixture.splits.write(out / "splits.json"),
        "truth": write_json(out / "truth.json", fixture.truth()),
    }
    for c, spec in enumerate(fixture.oracle_specs):
        written[f"oracle_{c}"] = write_json(out / "oracles" / f"oracle_{c}.json", spec.model_dump(mode="json"))
    return written
