"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array widths or agent counts do not match what an operation requires."""


class NumericError(FloatingPointError):
    """A non-finite value appeared where the computation requires finite data."""


class ContractViolationError(RuntimeError):
    """A caller broke an interface contract (e.g. fed masked data to a
    complete-observation path)."""


class EmptyBufferError(RuntimeError):
    """Sampling was requested from an empty replay buffer."""


class CheckpointError(RuntimeError):
    """A checkpoint file or manifest is missing, malformed, or tampered."""


class ConfigError(ValueError):
    """A run configuration file is invalid."""
