"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numerical failures exit 3.
"""


class DermsegError(Exception):
    """Base class for all package errors."""


class ShapeError(DermsegError):
    """Tensor or parameter dimensions violate an operation's contract."""


class PaddingError(DermsegError):
    """Requested padding margin is invalid for the input size."""


class LabelError(DermsegError):
    """Label tensor contains values outside the allowed class set."""


class StateError(DermsegError):
    """Operation invoked in a mode it does not support."""


class SpecError(DermsegError):
    """Architecture description is internally inconsistent."""


class CheckpointError(DermsegError):
    """Checkpoint file is malformed, truncated, or from another network."""


class DataError(DermsegError):
    """Dataset ingestion or iteration failure (missing/undecodable files)."""


class MetricError(DermsegError):
    """Metric requested over an empty or mismatched input."""


class ContractError(DermsegError):
    """Input violates a documented precondition (e.g. non-binary mask)."""


class NumericsError(DermsegError):
    """Non-finite values encountered where finite numbers are required."""
