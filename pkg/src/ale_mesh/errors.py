"""Exception hierarchy shared by all modules."""


class AleMeshError(Exception):
    """Base class for all errors raised by this package."""


class MeshError(AleMeshError):
    """Invalid mesh topology or geometry."""


class DegenerateElementError(MeshError):
    """Triangle area collapsed below the usable floor."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DegenerateEdgeError(MeshError):
    """Edge length collapsed below the usable floor."""

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class SurfaceError(AleMeshError):
    """Level-set surface evaluation failed."""


class SingularSurfaceError(SurfaceError):
    """Gradient norm fell under the floor; normal direction undefined."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ProjectionError(SurfaceError):
    """Newton projection onto the zero level set did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepFailure(AleMeshError):
    """Implicit stage solve did not reach the requested tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(AleMeshError):
    """Malformed or inconsistent run configuration."""
