"""
File formats for the pipeline: CSV manifests, JSON splits/configs/reports, digests.
NPY tensors go through uqlib.core.tensorfile.
"""

import hashlib
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Type, TypeVar

import numpy as np
import pandas as pd
import pydantic

from uqlib.core import ValidationError, atomic_write_text, read_tensor, write_tensor

logger = logging.getLogger(__name__)

HEADER_PREFIX = "# num_classes:"
REQUIRED_COLUMNS = ("sample_id", "label", "row")
QUALITY_COLUMN = "quality"

ModelT = TypeVar("ModelT", bound=pydantic.BaseModel)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def digest_ids(ids) -> str:
    """Order-independent digest of a set of sample ids."""
    return sha256_bytes("\n".join(sorted(str(i) for i in ids)).encode("utf-8"))


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj: Any) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"JSON file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path} is not valid JSON: {e}") from e


def config_hash(model: pydantic.BaseModel) -> str:
    return sha256_bytes(dumps_json(model.model_dump(mode="json")).encode("utf-8"))


def load_config(model_cls: Type[ModelT], path=None, overrides: Optional[Dict[str, Any]] = None) -> ModelT:
    """JSON file values, then non-None CLI overrides, validated by ``model_cls``.

    Dict-valued overrides merge one level deep into the matching JSON object.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        values = read_json(path)
        if not isinstance(values, dict):
            raise ValidationError(f"config {path} must hold a JSON object")
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            nested = {k: v for k, v in value.items() if v is not None}
            if nested:
                values[key] = {**values.get(key, {}), **nested}
        elif value is not None:
            values[key] = value
    return model_cls.model_validate(values)


def frame_to_csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n", float_format="%.12g")
    return buffer.getvalue()


def write_csv(path, frame: pd.DataFrame, header_line: Optional[str] = None) -> Path:
    text = frame_to_csv(frame)
    if header_line is not None:
        text = header_line + "\n" + text
    return atomic_write_text(path, text)


@dataclass
class Manifest:
    frame: pd.DataFrame
    num_classes: Optional[int] = None

    @property
    def group_columns(self) -> List[str]:
        return [c for c in self.frame.columns if c not in REQUIRED_COLUMNS and c != QUALITY_COLUMN]

    @property
    def sample_ids(self) -> List[str]:
        return self.frame["sample_id"].tolist()

    def select(self, ids) -> pd.DataFrame:
        """Rows for ``ids``, in the given order."""
        return self.frame.set_index("sample_id").loc[list(ids)].reset_index()

    def check_num_classes(self, k: int) -> None:
        if self.num_classes is not None and self.num_classes != k:
            raise ValidationError(f"manifest declares K = {self.num_classes}, scores have K = {k}")
        labels = self.frame["label"].to_numpy()
        if labels.size and labels.max() >= k:
            raise ValidationError(f"manifest label {labels.max()} >= K = {k}")

    def write(self, path) -> Path:
        header = None if self.num_classes is None else f"{HEADER_PREFIX} {self.num_classes}"
        return write_csv(path, self.frame, header)


def read_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    num_classes = None
    skip = 0
    if lines and lines[0].startswith(HEADER_PREFIX):
        try:
            num_classes = int(lines[0][len(HEADER_PREFIX):].strip())
        except ValueError as e:
            raise ValidationError(f"bad manifest header: {lines[0]!r}") from e
        skip = 1
    try:
        frame = pd.read_csv(path, skiprows=skip, dtype={"sample_id": str}, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ValidationError(f"{path} is not a valid manifest: {e}") from e
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"manifest {path} lacks columns {missing}")
    if frame["sample_id"].duplicated().any():
        dupes = sorted(frame.loc[frame["sample_id"].duplicated(), "sample_id"].unique())
        raise ValidationError(f"manifest has duplicate sample ids: {dupes[:5]}")
    for column in ("label", "row"):
        if not pd.api.types.is_integer_dtype(frame[column]) or (frame[column] < 0).any():
            raise ValidationError(f"manifest column '{column}' must hold non-negative integers")
    if num_classes is not None and (frame["label"] >= num_classes).any():
        raise ValidationError(f"manifest labels must be < {num_classes}")
    for column in frame.columns:
        if column not in ("label", "row", QUALITY_COLUMN):
            frame[column] = frame[column].astype(str)
    logger.debug(f"Read manifest {path}: {len(frame)} rows, K={num_classes}")
    return Manifest(frame, num_classes)


@dataclass
class Splits:
    calibration: List[str]
    evaluation: List[str]

    def to_dict(self) -> Dict[str, List[str]]:
        return {"calibration": list(self.calibration), "evaluation": list(self.evaluation)}

    def write(self, path) -> Path:
        return write_json(path, self.to_dict())


def check_splits(splits: Splits, manifest: Optional[Manifest] = None) -> Splits:
    """Leakage guard: the two splits must not share a sample id."""
    for name, ids in splits.to_dict().items():
        if not ids:
            raise ValidationError(f"{name} split is empty")
        if len(set(ids)) != len(ids):
            raise ValidationError(f"{name} split lists a sample id twice")
    shared = sorted(set(splits.calibration) & set(splits.evaluation))
    if shared:
        raise ValidationError(
            f"leakage: {len(shared)} sample ids in both calibration and evaluation splits "
            f"(e.g. {shared[:3]})"
        )
    if manifest is not None:
        known = set(manifest.sample_ids)
        unknown = sorted((set(splits.calibration) | set(splits.evaluation)) - known)
        if unknown:
            raise ValidationError(f"split ids missing from manifest: {unknown[:5]}")
    return splits


def read_splits(path, manifest: Optional[Manifest] = None) -> Splits:
    data = read_json(path)
    if not isinstance(data, dict) or set(data) != {"calibration", "evaluation"}:
        raise ValidationError(f"{path} must hold exactly 'calibration' and 'evaluation' lists")
    splits = Splits([str(i) for i in data["calibration"]], [str(i) for i in data["evaluation"]])
    return check_splits(splits, manifest)


def read_rows(path, rows: np.ndarray, axis: int = 0) -> np.ndarray:
    """Load a tensor and gather manifest rows along ``axis``."""
    tensor = read_tensor(path)
    if rows.size and (rows.min() < 0 or rows.max() >= tensor.shape[axis]):
        raise ValidationError(f"manifest row {rows.max()} outside {path} (shape {tensor.shape})")
    return np.take(tensor.astype(np.float64), rows, axis=axis)


__all__ = [
    "Manifest",
    "Splits",
    "check_splits",
    "config_hash",
    "digest_ids",
    "dumps_json",
    "frame_to_csv",
    "load_config",
    "read_json",
    "read_manifest",
    "read_rows",
    "read_splits",
    "read_tensor",
    "sha256_file",
    "write_csv",
    "write_json",
    "write_tensor",
]
