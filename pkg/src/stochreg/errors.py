"""Exception types raised across the package."""


class StochRegError(Exception):
    """Base class for all package errors."""


class ModelError(StochRegError):
    """Invalid plant or exosystem data."""


class UndefinedRelativeDegree(StochRegError):
    """No r <= n satisfies the stochastic relative-degree conditions."""


class UnsupportedConfiguration(StochRegError):
    """The requested combination of structure and method is not handled."""


class ResonanceError(StochRegError):
    """Regulator equations are singular or their solution diverges."""


class IntegrationBlowup(StochRegError):
    """A numerical integration produced non-finite values."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class OffGridError(StochRegError):
    """A time instant is not an integer multiple of the fine step."""


class GridMismatch(StochRegError):
    """Two time grids that must coincide do not."""


class DesignFailure(StochRegError):
    """Internal-model design could not produce a usable gain."""


class ConfigError(StochRegError):
    """Invalid experiment configuration."""
