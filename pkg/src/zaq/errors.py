"""Exception types shared across the package."""


class ZaqError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ZaqError):
    """Tensor shapes are incompatible with the requested operation."""


class DomainError(ZaqError):
    """Input values are outside the operation's domain (empty data, degenerate variance)."""


class ContractError(ZaqError):
    """An API contract was violated (non-scalar loss, negative gap, stale tape)."""


class ConfigError(ZaqError):
    """Invalid configuration value or malformed config file."""


class ModelError(ZaqError):
    """Model structure problem: unsupported layer, mismatched parameter."""


class FormatError(ZaqError):
    """Malformed binary container (bad magic or version)."""


class DivergenceError(ZaqError):
    """Training produced a non-finite loss; the run is aborted."""
