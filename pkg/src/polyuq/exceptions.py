"""Exception hierarchy."""


class PolyUQError(Exception):
    """Base class for all package errors."""


class ConfigError(PolyUQError, ValueError):
    """Invalid experiment configuration."""


class NumericalError(PolyUQError):
    """Base class for failures raised while computing."""


class GeometryError(NumericalError, ValueError):
    """Degenerate or invalid element geometry."""

    def __init__(self, message, element=None):
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)
        self.element = element


class MeshFormatError(PolyUQError, ValueError):
    """Malformed mesh file."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class MeshTopologyError(PolyUQError, ValueError):
    """Mesh connectivity violates the polygonal-mesh invariants."""

    def __init__(self, message, element=None, edge=None):
        super().__init__(message)
        self.element = element
        self.edge = edge


class CoefficientError(NumericalError, ValueError):
    """Diffusion coefficient is not uniformly positive."""


class SolverError(NumericalError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, message, residual_history=None, level=None, sample=None):
        where = []
        if level is not None:
            where.append(f"level {level}")
        if sample is not None:
            where.append(f"sample {sample}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.residual_history = residual_history
        self.level = level
        self.sample = sample
