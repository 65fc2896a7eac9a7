"""Exception types raised across the package."""


class GDMError(Exception):
    """Base class for all package errors."""


class ParseError(GDMError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GeometryError(GDMError):
    pass


class NonSimplicialMesh(GDMError):
    pass


class InvalidGamma(GDMError, ValueError):
    pass


class ConfigError(GDMError, ValueError):
    pass


class GDMismatch(GDMError):
    """A DOF vector was used with a discretisation it does not belong to."""


class TrajectoryLeftDomain(GDMError):
    pass


class NewtonDivergence(GDMError):
    def __init__(self, message, residual=None, step=None):
        self.residual = residual
        self.step = step
        super().__init__(message)


class LinearSolveFailure(GDMError):
    pass


class PointOutsideDomain(GDMError):
    pass


class BoundaryFluxNonzero(GDMError):
    pass
