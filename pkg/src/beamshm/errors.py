"""Exception hierarchy.

The CLI maps the three top-level families to distinct exit codes.
"""


class BeamShmError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BeamShmError, ValueError):
    """Invalid configuration, geometry or argument."""


class InvalidGeometryError(ConfigError):
    pass


class InvalidParameterError(ConfigError):
    pass


class ShapeError(ConfigError):
    """Layer or array dimensions do not line up."""


class NumericError(BeamShmError, ArithmeticError):
    """A numerical procedure failed (singular system, non-finite values...)."""


class FactorizationError(NumericError):
    pass


class SolverError(NumericError):
    def __init__(self, message, omega=None):
        super().__init__(message)
        self.omega = omega


class InvalidMomentError(NumericError):
    pass


class DivergenceError(NumericError):
    pass


class ArtifactIOError(BeamShmError, OSError):
    """Missing, unreadable or clobber-protected files."""
