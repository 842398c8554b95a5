class GridEdgeException(Exception):
    """Base exception class for all errors raised by gridedge.

    These exceptions result from invalid inputs or failed computations and
    are reported to the users with a dedicated exit code by the shell.
    """


class ConfigError(GridEdgeException):
    """Invalid configuration, feeder description or missing input files."""


class TopologyError(ConfigError):
    """The feeder graph is disconnected or references unknown buses."""


class GenerationError(ConfigError):
    """A synthetic scenario cannot be generated with the given settings."""


class DataIOError(GridEdgeException):
    """An artifact file cannot be read or written."""


class GridEdgeCoreException(GridEdgeException):
    """Basic exception for errors raised by the numerical core."""


class GridEdgeFatalException(GridEdgeCoreException):
    """Exception which cannot be recovered."""


class BadParameter(GridEdgeFatalException, ValueError):
    """An operation received an argument outside its domain."""


class NumericalError(GridEdgeCoreException):
    """A numerical procedure failed."""


class ModelError(NumericalError):
    """The nodal admittance model is singular or badly conditioned."""

    def __init__(self, message: str, buses=None, condition: float = float("nan")):
        super().__init__(message)
        self.buses = list(buses or [])
        self.condition = condition


class PowerFlowDivergence(NumericalError):
    """The fixed-point power flow did not converge."""

    def __init__(
        self,
        message: str,
        residual: float,
        iterations: int,
        loading: float = float("nan"),
        time_step=None,
    ):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.loading = loading
        self.time_step = time_step


class DegeneratePatternError(NumericalError):
    """No usable temporal pattern can be extracted."""


class DegenerateFitError(NumericalError):
    """The disaggregation fit is rank deficient."""
