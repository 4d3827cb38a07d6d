class ParameterError(ValueError):
    """A numeric parameter lies outside its admissible range."""


class DataError(ValueError):
    """Input data is malformed (NaN, wrong shape, ...)."""


class GeometryError(ValueError):
    """A requested ball or region does not fit the domain."""


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed in a way that cannot be reported as a result."""
