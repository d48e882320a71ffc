from uqlib.core.errors import CalibrationError, OracleError, UQError, ValidationError
from uqlib.core.simplex import (
    SIMPLEX_TOL,
    PassKind,
    PassStack,
    SaliencyMap,
    frozen_array,
    mean_probability,
    normalize_map,
    softmax,
    validate_labels,
    validate_logits,
    validate_probabilities,
)
from uqlib.core.tensorfile import (
    atomic_write_bytes,
    atomic_write_text,
    read_tensor,
    tensor_bytes,
    write_tensor,
)

__all__ = [
    "CalibrationError",
    "OracleError",
    "UQError",
    "ValidationError",
    "SIMPLEX_TOL",
    "PassKind",
    "PassStack",
    "SaliencyMap",
    "frozen_array",
    "mean_probability",
    "normalize_map",
    "softmax",
    "validate_labels",
    "validate_logits",
    "validate_probabilities",
    "atomic_write_bytes",
    "atomic_write_text",
    "read_tensor",
    "tensor_bytes",
    "write_tensor",
]
