"""Exception hierarchy shared by all modules."""


class WeightedFemError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(WeightedFemError, ValueError):
    """An argument is outside its admissible range."""


class MeshError(WeightedFemError, ValueError):
    """Invalid polygon or mesh input."""


class LocationError(WeightedFemError):
    """A point could not be located inside the mesh."""


class DegenerateWeightError(WeightedFemError, ValueError):
    """A weight construction would vanish identically."""


class IntegrationError(WeightedFemError):
    """Quadrature produced a non-finite value."""


class DivergenceError(IntegrationError):
    """Subdivision totals indicate a non-integrable integrand."""


class SolverError(WeightedFemError):
    """A linear or nonlinear solve failed."""


class NonconvergenceError(SolverError):
    """An iterative solve stopped before reaching its tolerance.

    The partial :class:`~weighted_fem.solvers.SolveReport` is attached as
    ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnsupportedExponentError(ParameterError):
    """The requested exponent has no exact algorithm."""


class ConfigError(WeightedFemError, ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line
