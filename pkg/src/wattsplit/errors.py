"""Exception types shared across the package."""


class DataError(ValueError):
    """A data contract was violated (bad grid, gaps where none allowed, ...)."""


class ConfigError(ValueError):
    """An experiment or dataset configuration is invalid."""


class TrainingDiverged(RuntimeError):
    """A training run produced a non-finite loss."""
