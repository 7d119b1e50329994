"""Exception hierarchy shared across the package."""


class RplError(Exception):
    """Base class for all package errors."""


class ShapeError(RplError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(RplError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(RplError, ValueError):
    """A call violated an operation's contract (bad labels, non-scalar loss, ...)."""


class DataError(RplError, ValueError):
    """Dataset content is unusable (empty class, no known samples, ...)."""


class FormatError(RplError, ValueError):
    """An on-disk file does not match its binary format."""


class NonFiniteError(RplError, FloatingPointError):
    """A forward computation produced NaN or Inf."""


class ChecksumError(FormatError):
    """A checkpoint checksum did not validate."""
