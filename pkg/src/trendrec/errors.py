"""Exception taxonomy shared across the package.

The command-line layer maps these onto process exit codes, so keep the
classes distinct rather than collapsing them into ValueError.
"""


class TrendRecError(Exception):
    """Base class for all library errors."""


class ConfigError(TrendRecError):
    """Invalid configuration value (bad rate, nonpositive dimension, ...)."""


class DataError(TrendRecError):
    """Bad input data: parse failures, out-of-range IDs, empty sessions."""


class ShapeError(TrendRecError):
    """Operand shapes incompatible with an operation's contract."""


class NonFiniteError(TrendRecError):
    """A tensor acquired NaN or Inf values."""


class DegenerateRowError(TrendRecError):
    """Softmax or attention row with every position masked out."""


class NormalizationError(TrendRecError):
    """L2 normalization of a row whose norm is below the floor."""


class GradientError(TrendRecError):
    """Backward-pass misuse: non-scalar loss, missing gradient, ..."""


class TrainingDivergedError(TrendRecError):
    """Training loss became non-finite; carries batch diagnostics."""

    def __init__(self, batch_index: int, loss_value: float):
        self.batch_index = batch_index
        self.loss_value = loss_value
        super().__init__(
            f"non-finite loss {loss_value!r} at batch {batch_index}"
        )


class CheckpointError(TrendRecError):
    """Base class for checkpoint load/save failures."""


class CheckpointCorruptError(CheckpointError):
    """File is not a checkpoint or its structure is inconsistent."""


class CheckpointChecksumError(CheckpointError):
    """Stored content checksum does not match the file bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointShapeError(CheckpointError):
    """Stored tensors do not fit the configuration they are loaded under."""


class VocabMismatchError(CheckpointError):
    """Checkpoint and dataset were built against different vocabularies."""
