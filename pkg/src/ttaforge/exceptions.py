"""Custom exceptions for the ttaforge package."""


class TTAForgeError(Exception):
    """Base exception for all ttaforge errors."""


class InvalidArgumentError(TTAForgeError, ValueError):
    """Raised when an operation receives an argument outside its domain."""


class InvalidStateError(TTAForgeError, RuntimeError):
    """Raised when an operation is called on state it cannot accept."""


class CheckpointError(TTAForgeError):
    """Base exception for checkpoint I/O errors."""


class CheckpointDecodeError(CheckpointError):
    """Raised when a checkpoint file is corrupt, truncated or of another version."""


class MissingCheckpointError(CheckpointError):
    """Raised when an experiment needs a checkpoint that does not exist."""


class DatasetError(TTAForgeError):
    """Base exception for dataset ingestion errors."""


class DatasetFormatError(DatasetError):
    """Raised when a CSV dataset row cannot be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetFetchError(DatasetError):
    """Raised when fetching a remote CSV dataset fails."""


class ExperimentError(TTAForgeError):
    """Base exception for experiment driver errors."""


class PresetError(ExperimentError):
    """Raised when an unknown method preset is requested."""


class ReportError(ExperimentError):
    """Raised when a report cannot be rendered."""
