"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError -> 2, DataError -> 3, TrainingError -> 4,
CompatibilityError -> 5.
"""


class FunnelLensError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FunnelLensError, ValueError):
    """Tensor operands have incompatible shapes."""


class ConfigError(FunnelLensError):
    """Invalid configuration: unknown keys, bad values, missing columns."""


class DataError(FunnelLensError):
    """Input data cannot be used: too many malformed rows, bad store file."""


class TrainingError(FunnelLensError):
    """Training aborted, e.g. a non-finite loss."""


class CompatibilityError(FunnelLensError):
    """Checkpoint and data store do not belong together."""
