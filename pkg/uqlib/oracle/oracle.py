"""Black-box prediction oracles.

An oracle maps a batch of grayscale images (B x H x W, values in [0, 1]) to one
probability row per image. Builtins are pure numpy; the subprocess oracle
exchanges NPY files with an external command.
"""

import json
import logging
import os
import shlex
import subprocess
import tempfile
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, model_validator

from uqlib.core.errors import OracleError, UQError, ValidationError
from uqlib.core.simplex import ProbabilityMatrix, validate_probabilities
from uqlib.core.tensorfile import read_tensor, write_tensor

logger = logging.getLogger(__name__)

# pixel tolerance when comparing a superpixel with its fill value
ACTIVE_TOL = 1e-9


class OracleMode(str, Enum):
    BUILTIN = "builtin"
    SUBPROCESS = "subprocess"


class OracleSpec(BaseModel):
    """Declarative oracle description, as stored in oracle JSON files."""

    mode: OracleMode
    builtin_name: str | None = Field(None, description="constant | planted | linear")
    command: str | None = Field(None, description="Executable invocation; input and output paths are appended")
    batch_limit: int = Field(64, ge=1, description="Maximum images per call")
    reentrant: bool = False
    params: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _one_target(self) -> "OracleSpec":
        if self.mode is OracleMode.BUILTIN:
            if not self.builtin_name or self.command is not None:
                raise ValueError("builtin oracles need builtin_name and no command")
            if self.builtin_name not in BUILTINS:
                raise ValueError(
                    f"unknown builtin oracle '{self.builtin_name}'; available: {sorted(BUILTINS)}"
                )
        else:
            if not self.command or self.builtin_name is not None:
                raise ValueError("subprocess oracles need command and no builtin_name")
        return self


def _check_batch(batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    if batch.ndim != 3 or batch.shape[0] < 1:
        raise ValidationError(f"oracle batch must be B x H x W, got shape {batch.shape}")
    if not np.all(np.isfinite(batch)) or batch.min() < 0.0 or batch.max() > 1.0:
        raise ValidationError("oracle batch values must be finite and lie in [0, 1]")
    return batch


class Oracle(ABC):
    batch_limit: int = 64
    reentrant: bool = True

    @property
    @abstractmethod
    def num_classes(self) -> int | None: ...

    @abstractmethod
    def _predict(self, batch: np.ndarray) -> np.ndarray: ...

    def predict(self, batch) -> ProbabilityMatrix:
        return predict(self, batch)


def _spread(target: np.ndarray, class_index: int, num_classes: int) -> np.ndarray:
    """Rows with ``target`` on one class and the remainder shared by the rest."""
    rows = np.repeat(((1.0 - target) / (num_classes - 1))[:, None], num_classes, axis=1)
    rows[:, class_index] = target
    return rows


class ConstantOracle(Oracle):
    def __init__(self, probabilities, batch_limit: int = 64):
        self.probabilities = validate_probabilities(probabilities)
        if self.probabilities.ndim != 1:
            raise ValidationError("constant oracle needs a single probability vector")
        self.batch_limit = batch_limit

    @property
    def num_classes(self) -> int:
        return self.probabilities.shape[0]

    def _predict(self, batch: np.ndarray) -> np.ndarray:
        return np.tile(self.probabilities, (batch.shape[0], 1))


class _SegmentOracle(Oracle):
    """Base for builtins that read which superpixels are still present.

    With ``fill_values`` (one value per superpixel, the value a perturbation writes
    into a switched-off superpixel) a superpixel is present while any pixel differs
    from its fill value. Without them, a superpixel is present while its pixels are
    not all equal, which only suits textured images.
    """

    def __init__(
        self,
        segmentation,
        class_index: int,
        num_classes: int,
        batch_limit: int,
        fill_values=None,
    ):
        seg = np.asarray(segmentation)
        if seg.ndim != 2 or not np.issubdtype(seg.dtype, np.integer):
            raise ValidationError("oracle segmentation must be an integer H x W map")
        if num_classes < 2 or not 0 <= class_index < num_classes:
            raise ValidationError(f"class {class_index} invalid for K = {num_classes}")
        flat = seg.ravel()
        self.segmentation = seg
        self.num_superpixels = int(flat.max()) + 1
        self._order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.num_superpixels)
        if np.any(counts == 0):
            raise ValidationError("oracle segmentation has unused superpixel ids")
        self._starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        if fill_values is not None:
            fill_values = np.asarray(fill_values, dtype=np.float64)
            if fill_values.shape != (self.num_superpixels,):
                raise ValidationError(
                    f"{fill_values.size} fill values for {self.num_superpixels} superpixels"
                )
        self.fill_values = fill_values
        self.class_index = class_index
        self._num_classes = num_classes
        self.batch_limit = batch_limit

    @property
    def num_classes(self) -> int:
        return self._num_classes

    def active(self, batch: np.ndarray) -> np.ndarray:
        """B x S boolean: True where the superpixel has not been filled."""
        if batch.shape[1:] != self.segmentation.shape:
            raise ValidationError(
                f"image shape {batch.shape[1:]} does not match segmentation {self.segmentation.shape}"
            )
        pixels = batch.reshape(batch.shape[0], -1)[:, self._order]
        hi = np.maximum.reduceat(pixels, self._starts, axis=1)
        lo = np.minimum.reduceat(pixels, self._starts, axis=1)
        if self.fill_values is None:
            return (hi - lo) > ACTIVE_TOL
        fill = self.fill_values[None, :]
        return np.maximum(hi - fill, fill - lo) > ACTIVE_TOL


class PlantedOracle(_SegmentOracle):
    """p(class) = hi while the planted superpixel is present, lo once it is filled."""

    def __init__(
        self,
        segmentation,
        superpixel: int,
        class_index: int = 0,
        num_classes: int = 2,
        hi: float = 0.9,
        lo: float = 0.1,
        batch_limit: int = 64,
        fill_values=None,
    ):
        super().__init__(segmentation, class_index, num_classes, batch_limit, fill_values)
        if not 0 <= superpixel < self.num_superpixels:
            raise ValidationError(f"planted superpixel {superpixel} not in segmentation")
        if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
            raise ValidationError("planted probabilities must lie in [0, 1]")
        self.superpixel = superpixel
        self.hi = hi
        self.lo = lo

    def _predict(self, batch: np.ndarray) -> np.ndarray:
        target = np.where(self.active(batch)[:, self.superpixel], self.hi, self.lo)
        return _spread(target, self.class_index, self.num_classes)


class LinearMaskOracle(_SegmentOracle):
    """p(class) = clamp(intercept + sum_s a_s m_s, 0, 1) over present superpixels m."""

    def __init__(
        self,
        segmentation,
        coefficients,
        intercept: float = 0.0,
        class_index: int = 0,
        num_classes: int = 2,
        batch_limit: int = 64,
        fill_values=None,
    ):
        super().__init__(segmentation, class_index, num_classes, batch_limit, fill_values)
        coefficients = np.asarray(coefficients, dtype=np.float64)
        if coefficients.shape != (self.num_superpixels,):
            raise ValidationError(
                f"{coefficients.shape[0]} coefficients for {self.num_superpixels} superpixels"
            )
        self.coefficients = coefficients
        self.intercept = float(intercept)

    def _predict(self, batch: np.ndarray) -> np.ndarray:
        score = self.intercept + self.active(batch).astype(np.float64) @ self.coefficients
        return _spread(np.clip(score, 0.0, 1.0), self.class_index, self.num_classes)


class SubprocessOracle(Oracle):
    """File-based exchange: ``command <input.npy> <output.npy>``, exit 0 on success.

    Every call leaves ``call_NNNNN_input.npy``, ``call_NNNNN_output.npy`` and a
    ``call_NNNNN.log`` transcript in the work directory.
    """

    def __init__(
        self,
        command: str,
        batch_limit: int = 64,
        reentrant: bool = False,
        workdir=None,
        timeout: float | None = None,
        env: dict[str, str] | None = None,
    ):
        self.argv = shlex.split(command)
        if not self.argv:
            raise ValidationError("subprocess oracle command is empty")
        self.batch_limit = batch_limit
        self.reentrant = reentrant
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix="plane-uq-oracle-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self.env = None if env is None else {**os.environ, **env}
        self._calls = 0
        self._num_classes: int | None = None
        self._lock = threading.Lock()

    @property
    def num_classes(self) -> int | None:
        return self._num_classes

    def _next_call(self) -> int:
        with self._lock:
            self._calls += 1
            return self._calls

    def _predict(self, batch: np.ndarray) -> np.ndarray:
        call = self._next_call()
        stem = f"call_{call:05d}"
        in_path = self.workdir / f"{stem}_input.npy"
        out_path = self.workdir / f"{stem}_output.npy"
        log_path = self.workdir / f"{stem}.log"
        write_tensor(in_path, batch)
        argv = [*self.argv, str(in_path), str(out_path)]
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout, env=self.env
            )
        except (OSError, subprocess.TimeoutExpired) as e:
            log_path.write_text(json.dumps({"argv": argv, "error": str(e)}, indent=2) + "\n")
            raise OracleError(f"oracle command failed to run: {e}", transcript_path=str(log_path)) from e

        transcript = {
            "argv": argv,
            "returncode": proc.returncode,
            "stdout": proc.stdout,
            "stderr": proc.stderr,
            "input_shape": list(batch.shape),
        }
        log_path.write_text(json.dumps(transcript, indent=2) + "\n")
        if proc.returncode != 0:
            raise OracleError(
                f"oracle exited with code {proc.returncode}", transcript_path=str(log_path)
            )
        try:
            rows = read_tensor(out_path)
        except ValidationError as e:
            raise OracleError(f"malformed oracle output: {e}", transcript_path=str(log_path)) from e
        if rows.ndim != 2 or rows.shape[0] != batch.shape[0]:
            raise OracleError(
                f"oracle returned shape {rows.shape} for {batch.shape[0]} images",
                transcript_path=str(log_path),
            )
        with self._lock:
            if self._num_classes is None:
                self._num_classes = rows.shape[1]
            elif rows.shape[1] != self._num_classes:
                raise OracleError(
                    f"oracle returned K = {rows.shape[1]} after K = {self._num_classes}",
                    transcript_path=str(log_path),
                )
        return rows


def predict(oracle: Oracle, batch) -> ProbabilityMatrix:
    """One oracle call on at most ``batch_limit`` images; rows come back validated."""
    batch = _check_batch(batch)
    if batch.shape[0] > oracle.batch_limit:
        raise ValidationError(
            f"batch of {batch.shape[0]} images exceeds batch_limit {oracle.batch_limit}"
        )
    rows = oracle._predict(batch)
    try:
        rows = validate_probabilities(rows, name="oracle output")
    except ValidationError as e:
        raise OracleError(f"oracle returned invalid rows: {e}") from e
    if rows.ndim != 2 or rows.shape[0] != batch.shape[0]:
        raise OracleError(f"oracle returned shape {rows.shape} for {batch.shape[0]} images")
    return rows


def predict_many(oracle: Oracle, images, max_workers: int = 1) -> ProbabilityMatrix:
    """Split ``images`` into batch_limit-sized calls and stack the rows in order.

    Calls overlap only for reentrant oracles and ``max_workers > 1``. A failing
    call is reported with its batch index.
    """
    images = _check_batch(images)
    limit = oracle.batch_limit
    batches = [images[i : i + limit] for i in range(0, images.shape[0], limit)]

    def run(indexed):
        index, batch = indexed
        try:
            return predict(oracle, batch)
        except OracleError as e:
            raise OracleError(str(e), batch_index=index, transcript_path=e.transcript_path) from e
        except UQError:
            raise
        except Exception as e:
            raise OracleError(f"oracle call raised {type(e).__name__}: {e}", batch_index=index) from e

    if oracle.reentrant and max_workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, enumerate(batches)))
    else:
        results = [run(item) for item in enumerate(batches)]
    return np.concatenate(results, axis=0)


BUILTINS = {
    "constant": ConstantOracle,
    "planted": PlantedOracle,
    "linear": LinearMaskOracle,
}


def build_oracle(spec: OracleSpec, segmentation=None, workdir=None, env=None, fill_values=None) -> Oracle:
    """Instantiate the oracle a spec describes.

    Segment-based builtins use ``segmentation`` if given, else ``params["segmentation"]``,
    and ``fill_values`` unless the spec's params carry their own.
    """
    if spec.mode is OracleMode.SUBPROCESS:
        return SubprocessOracle(
            spec.command,
            batch_limit=spec.batch_limit,
            reentrant=spec.reentrant,
            workdir=workdir,
            timeout=spec.params.get("timeout"),
            env=env,
        )
    params = dict(spec.params)
    if spec.builtin_name == "constant":
        return ConstantOracle(params["probabilities"], batch_limit=spec.batch_limit)
    if segmentation is None:
        if "segmentation" in params:
            segmentation = np.asarray(params["segmentation"], dtype=np.int64)
        elif "cell" in params and "shape" in params:
            from uqlib.explain.segmentation import grid_superpixels

            h, w = params["shape"]
            segmentation = grid_superpixels(h, w, params["cell"]).seg
        else:
            raise ValidationError(f"builtin '{spec.builtin_name}' needs a segmentation map")
    elif hasattr(segmentation, "seg"):
        segmentation = segmentation.seg
    params.pop("segmentation", None)
    params.pop("cell", None)
    params.pop("shape", None)
    if fill_values is not None:
        params.setdefault("fill_values", fill_values)
    try:
        return BUILTINS[spec.builtin_name](segmentation, batch_limit=spec.batch_limit, **params)
    except TypeError as e:
        raise ValidationError(f"bad parameters for builtin '{spec.builtin_name}': {e}") from e
