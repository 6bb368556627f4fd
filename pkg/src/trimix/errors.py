"""Exception hierarchy shared across the package."""


class TrimixError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(TrimixError):
    """Operand shapes are incompatible for the requested operation."""


class RankError(DimensionError):
    """Operand has the wrong number of axes."""


class DegenerateMaskError(TrimixError):
    """A softmax normalization slice has no active entries."""


class ConfigError(TrimixError):
    """Invalid or inconsistent configuration values."""


class VocabularyError(ConfigError):
    """A token id lies outside the embedding table."""


class DeterminismError(TrimixError):
    """A closure expected to be deterministic returned differing values."""


class IngestionError(TrimixError):
    """Raw interaction log could not be parsed."""


class DatasetError(TrimixError):
    """Dataset is unusable (e.g. empty after filtering)."""


class DivergenceError(TrimixError):
    """Training produced non-finite values."""


class CheckpointError(TrimixError):
    """Checkpoint file is malformed or has an unsupported version."""
