class UQError(Exception):
    """Base class for toolkit errors."""


class ValidationError(UQError, ValueError):
    """Input violates a shape, range or simplex contract."""


class CalibrationError(UQError):
    """Calibration data cannot support a fit (e.g. a single label class)."""


class OracleError(UQError, RuntimeError):
    """A prediction oracle failed or returned a malformed response."""

    def __init__(
        self,
        message: str,
        batch_index: int | None = None,
        transcript_path: str | None = None,
    ):
        details = message
        if batch_index is not None:
            details += f" (batch {batch_index})"
        if transcript_path is not None:
            details += f" [transcript: {transcript_path}]"
        super().__init__(details)
        self.batch_index = batch_index
        self.transcript_path = transcript_path
