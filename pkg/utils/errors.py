"""
Exception hierarchy shared by every RAAD module
"""

from typing import Optional


class RaadError(Exception):
    """Base class for all pipeline errors."""

    pass


class DimensionError(RaadError):
    """Raised when tensor shapes disagree; names the offending axis."""

    def __init__(self, message: str, axis: Optional[str] = None):
        self.axis = axis
        if axis is not None:
            message = f"{message} (axis: {axis})"
        super().__init__(message)


class ParameterError(RaadError):
    """Raised for invalid scalar parameters (kernel sizes, bit widths, scales)."""

    pass


class ContractError(RaadError):
    """Raised when an operation's precondition is violated."""

    pass


class NonFiniteError(RaadError):
    """Raised when a forward or backward pass produces NaN or Inf."""

    pass


class ConfigError(RaadError):
    """Raised for pipeline config schema violations; carries the field path."""

    def __init__(self, fieldPath: str, message: str):
        self.fieldPath = fieldPath
        super().__init__(f"{fieldPath}: {message}")


class PipelineOrderError(RaadError):
    """Raised when a command runs before its predecessor's artifact exists."""

    def __init__(self, missingArtifact: str, message: Optional[str] = None):
        self.missingArtifact = missingArtifact
        super().__init__(message or f"missing artifact: {missingArtifact}")


class ParseError(RaadError):
    """Raised for malformed image or manifest files; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


class DatasetContractError(RaadError):
    """Raised when a training split contains anomalous samples."""

    pass


class SpecError(RaadError):
    """Raised for unsatisfiable synthetic scene or defect specifications."""

    pass


class UndefinedMetricError(RaadError):
    """Raised when a metric is undefined for the given labels."""

    pass


class ArtifactIntegrityError(RaadError):
    """Raised when a written artifact fails checksum self-verification."""

    pass
