"""NPY v1.0 tensor files and atomic writes.

Float tensors are stored little-endian float32 or float64, C-ordered. Integer
tensors (segmentation maps) are stored little-endian int32 or int64.
"""

import io
import logging
import os
import tempfile
from pathlib import Path

import numpy as np

from uqlib.core.errors import ValidationError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = (np.dtype("<f4"), np.dtype("<f8"))
INT_DTYPES = (np.dtype("<i4"), np.dtype("<i8"))
NPY_VERSION = (1, 0)


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary sibling file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _storage_dtype(array: np.ndarray) -> np.dtype:
    if np.issubdtype(array.dtype, np.floating):
        return np.dtype("<f4") if array.dtype.itemsize <= 4 else np.dtype("<f8")
    if np.issubdtype(array.dtype, np.integer) or array.dtype == np.bool_:
        return np.dtype("<i4") if array.dtype.itemsize <= 4 else np.dtype("<i8")
    raise ValidationError(f"unsupported tensor dtype {array.dtype}")


def tensor_bytes(array) -> bytes:
    array = np.asarray(array)
    array = np.ascontiguousarray(array, dtype=_storage_dtype(array))
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, array, version=NPY_VERSION, allow_pickle=False)
    return buffer.getvalue()


def write_tensor(path, array) -> Path:
    return atomic_write_bytes(path, tensor_bytes(array))


def read_tensor(path, integer: bool = False) -> np.ndarray:
    """Load an NPY file, enforcing dtype, byte order and C order."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"tensor file not found: {path}")
    try:
        with path.open("rb") as handle:
            version = np.lib.format.read_magic(handle)
            if version == (1, 0):
                header = np.lib.format.read_array_header_1_0(handle)
            elif version == (2, 0):
                header = np.lib.format.read_array_header_2_0(handle)
            else:
                raise ValueError(f"unsupported NPY version {version}")
            shape, fortran_order, dtype = header
    except ValueError as e:
        raise ValidationError(f"{path} is not a valid NPY file: {e}") from e
    allowed = INT_DTYPES if integer else FLOAT_DTYPES
    if dtype not in allowed:
        kinds = "int32/int64" if integer else "float32/float64"
        raise ValidationError(f"{path} has dtype {dtype}; expected little-endian {kinds}")
    if fortran_order:
        raise ValidationError(f"{path} is Fortran-ordered; C order required")
    array = np.load(path, allow_pickle=False)
    if array.shape != tuple(shape):
        raise ValidationError(f"{path} payload does not match its header shape {shape}")
    return array
