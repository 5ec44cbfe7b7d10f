"""Exception kinds shared across the package.

The hierarchy matters for the CLI exit-code mapping: ``ConfigError`` maps to
exit code 2, ``DataError`` (and subclasses) to 3, ``NumericalAbortError`` to 4.
"""
from __future__ import annotations


class MsfinError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MsfinError):
    """Tensor extents incompatible with the requested operation."""


class ContractError(MsfinError):
    """A caller violated a documented precondition (NaN input, non-scalar loss, ...)."""


class MaskedRowError(MsfinError):
    """An attention row has no valid key to attend to."""


class EmptySequenceError(MsfinError):
    """A sequence-consuming operation received zero frames."""


class ConfigError(MsfinError):
    """Invalid or inconsistent configuration."""


class DataError(MsfinError):
    """Base class for dataset content and container-format problems."""


class BadMagicError(DataError):
    """A container file does not start with the expected magic bytes."""


class FormatVersionError(DataError):
    """A container file declares an unsupported format version."""


class ShapeInconsistencyError(DataError):
    """A stored record's tensors disagree with its declared extents."""


class AccidentFrameRangeError(DataError):
    """A record's accident frame lies outside its frame range."""


class RawImportError(DataError):
    """A raw float dump cannot be interpreted under the requested layout."""


class CheckpointError(MsfinError):
    """Base class for checkpoint serialization problems."""


class CorruptHeaderError(CheckpointError):
    """Checkpoint bytes are truncated or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint declares an unsupported version."""


class DimensionMismatchError(CheckpointError):
    """A stored tensor's extents disagree with the receiving parameter."""


class MetricUndefinedError(MsfinError):
    """A metric has no defined value on the given predictions."""


class NumericalAbortError(MsfinError):
    """Training hit a non-finite loss and stopped.

    Carries enough context to localize the failure.
    """

    def __init__(self, epoch: int, batch: int, grad_norm: float, message: str = ""):
        self.epoch = epoch
        self.batch = batch
        self.grad_norm = grad_norm
        detail = message or (
            f"non-finite loss at epoch {epoch}, batch {batch} "
            f"(gradient norm {grad_norm:.6g})"
        )
        super().__init__(detail)
