"""Exception types shared across the package."""


class ModAlignError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ModAlignError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ModAlignError, ValueError):
    """A configuration value is outside its allowed range."""


class ContractError(ModAlignError, ValueError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class TrainingError(ModAlignError, RuntimeError):
    """Training failed (NaN loss/gradients), with diagnostics in the message."""


class DataError(ModAlignError, ValueError):
    """A batch or corpus is missing required content."""


class ConfigError(ModAlignError, ValueError):
    """Experiment configuration is inconsistent with its inputs."""


class FormatError(ModAlignError, ValueError):
    """A binary file failed to parse; message carries the byte offset."""


class IngestionError(ModAlignError, ValueError):
    """CSV ingestion failed; message carries file and line."""
