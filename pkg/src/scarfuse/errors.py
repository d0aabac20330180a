"""Exception types shared across the package."""


class ScarfuseError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(ScarfuseError):
    """A config value or combination of values is invalid."""


class DataError(ScarfuseError):
    """On-disk or in-memory data violates a documented contract."""


class ShapeError(DataError):
    """An array or tensor has the wrong shape, dtype, or value range."""


class GeometryError(DataError):
    """Anatomy masks are too degenerate for the requested construction."""


class PhantomSpecError(ConfigurationError):
    """A synthetic phantom request is internally inconsistent."""


class TrainingAbort(ScarfuseError):
    """Training produced a non-finite quantity and must stop."""
