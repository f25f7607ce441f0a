"""Exception types shared across the package."""


class KdsimError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(KdsimError):
    """Invalid configuration value or argument combination."""


class DataError(KdsimError):
    """Dataset content violates a precondition (empty set, bad label, ...)."""


class ShapeError(KdsimError):
    """Mismatched matrix or vector dimensions."""


class ParseError(KdsimError):
    """Malformed input file; the message names the offending line."""


class PartitionError(KdsimError):
    """A partitioning strategy cannot satisfy its constraints."""


class DomainError(KdsimError):
    """Numeric argument outside the mathematical domain of an operation."""
