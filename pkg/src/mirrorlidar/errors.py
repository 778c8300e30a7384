"""Exception hierarchy shared across the package."""


class MirrorLidarError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MirrorLidarError, ValueError):
    """Invalid configuration, malformed design set or unreadable input file."""


class InfeasibleGeometryError(MirrorLidarError, ValueError):
    """No mirror of positive length satisfies the requested bearing constraints."""


class GeometryError(MirrorLidarError, ValueError):
    """A geometric quantity is undefined (e.g. arccos argument out of range)."""


class InvalidReflectionError(GeometryError):
    """A measured range is too short to have travelled via the mirror."""


class PoleError(GeometryError):
    """The perturbed beam runs parallel to the mirror (tangent pole)."""


class DegenerateError(MirrorLidarError, ValueError):
    """Input data cannot constrain the requested estimate."""


class ConvergenceError(MirrorLidarError, RuntimeError):
    """An iterative solver exhausted its budget.

    The best iterate found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
