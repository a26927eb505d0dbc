"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when operand shapes or grids are incompatible."""


class TapeError(RuntimeError):
    """Raised when backward is requested for a tensor that is not on the tape."""


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


class DomainError(ValueError):
    """Raised when an input lies outside the domain an operation accepts."""


class DatasetError(RuntimeError):
    """Raised when a dataset directory is malformed (orphans, unreadable files)."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint is corrupt or incompatible with the model."""


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""
