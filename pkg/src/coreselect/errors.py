"""Exception types shared across the package."""


class CoreselectError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CoreselectError):
    """Invalid configuration or an infeasible request."""


class ShapeError(CoreselectError):
    """Mismatched array dimensions or lengths."""


class FormatError(CoreselectError):
    """Malformed or unrecognized file content."""


class DataError(CoreselectError):
    """Structurally valid input holding unusable values (NaN, bad labels, ...)."""


class IoError(CoreselectError):
    """Filesystem read or write failure."""


class NumericalError(CoreselectError):
    """A numerical routine failed beyond recovery (e.g. factorization)."""


class InsufficientDataError(CoreselectError):
    """Too few usable observations for a statistical procedure."""
