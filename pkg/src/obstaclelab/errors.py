"""Exception hierarchy shared by all modules."""


class ObstacleLabError(Exception):
    """Base class for every error raised by the package."""


class EmptyDomainError(ObstacleLabError):
    pass


class RegularityError(ObstacleLabError):
    pass


class EllipticityError(ObstacleLabError):
    pass


class MonotonicityError(ObstacleLabError):
    """Assembly produced a positive off-diagonal entry."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class PlacementError(ObstacleLabError):
    pass


class ConvergenceError(ObstacleLabError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class FeasibilityError(ObstacleLabError):
    pass


class SymmetryError(ObstacleLabError):
    pass


class ResolutionError(ObstacleLabError):
    def __init__(self, message, required_level=None):
        super().__init__(message)
        self.required_level = required_level


class ScenarioError(ObstacleLabError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class RegistryError(ObstacleLabError):
    pass
