"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model or configuration parameter lies outside its allowed domain."""


class ValidationError(ValueError):
    """Input data (time tags, histograms) violate a structural invariant."""


class ConfigurationError(ValueError):
    """Incompatible geometry or run configuration."""


class InitializationError(RuntimeError):
    """The comb fit could not be seeded from the histogram."""


class JitterLimitedError(ValueError):
    """Measured tooth width does not exceed the system jitter."""
