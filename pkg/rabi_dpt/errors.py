"""Exceptions and warnings raised by rabi-dpt."""


class RabiDPTError(Exception):
    """Base class for every error raised by rabi-dpt."""


class ParameterError(RabiDPTError, ValueError):
    """A physical parameter or argument is outside its domain."""


class ConfigError(ParameterError):
    """A run configuration could not be parsed or failed validation."""


class NumericalError(RabiDPTError, ArithmeticError):
    """A numerical routine failed or produced an untrustworthy result."""


class CutoffError(NumericalError):
    """The Fock cutoff is too small for the requested state or dynamics."""


class SpectralError(NumericalError):
    """The eigensolver failed on a Hamiltonian instance."""


class IntegrationError(NumericalError):
    """The semiclassical integrator violated its conservation tolerances."""


class FitError(NumericalError):
    """A regression could not be performed on the given data."""


class ConvergenceWarning(RuntimeWarning):
    """A numerical result is close to the limits of its truncation."""


class CacheWarning(ConvergenceWarning):
    """A cache file was ignored because it is stale or unreadable."""
