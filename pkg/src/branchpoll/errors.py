"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model or experiment configuration."""


class GuardViolation(ConfigurationError):
    """A stability guard (e.g. exhaustive sub-busy period) does not hold."""


class PopulationOverflowError(OverflowError):
    """Particle counts left the exactly representable integer range."""


class CensoredDrawError(RuntimeError):
    """A within-cycle sampler hit its service cap before finishing."""
