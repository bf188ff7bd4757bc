"""Shared exception types."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class CheckpointFormatError(ValueError):
    """Checkpoint file is malformed: bad magic, version, or truncation."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""


class InsufficientHistoryError(ValueError):
    """Series is too short for the requested lag set."""


class InsufficientVocabularyError(ValueError):
    """Pretrained vocabulary has fewer rows than the requested bin count."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""
