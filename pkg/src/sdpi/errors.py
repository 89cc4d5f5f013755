"""Exception types shared across the package."""


class SdpiError(Exception):
    pass


class DomainError(SdpiError):
    """A field query fell outside the enlarged domain."""


class GridMismatchError(SdpiError):
    """Two grid fields do not share the same grid."""


class ConfigError(SdpiError):
    """Invalid or inconsistent run configuration."""


class DataError(SdpiError):
    """Malformed transition data."""


class FitFailureError(SdpiError):
    """Dynamics fit could not be completed."""


class SamplerError(SdpiError):
    """Collocation sampler failed (e.g. collar rejection rate too low)."""


class NumericalFailureError(SdpiError):
    """Non-finite values encountered during a numerical computation."""


class BlowUpError(NumericalFailureError):
    """Time marching produced non-finite values."""
