"""Multitype branching processes with immigration and final product in a
random environment, and cyclic polling systems mapped onto them."""

__version__ = "0.1.0"

from .errors import CensoredDrawError, ConfigurationError, GuardViolation, PopulationOverflowError
from .rng import make_stream

__all__ = ["CensoredDrawError", "ConfigurationError", "GuardViolation", "PopulationOverflowError",
           "make_stream", "__version__"]
