"""Exception types shared across the package."""


class ChopsolveError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(ChopsolveError, ValueError):
    """Operand shapes do not conform."""


class GammaBoundError(ChopsolveError, ValueError):
    """The accumulated-roundoff bound nu/(1-nu) is undefined (nu >= 1)."""


class SpectralBoundError(ChopsolveError, ValueError):
    """Invalid singular-value bounds, coefficient breakdown, or an
    iteration count that overflows."""


class SingularSystemError(ChopsolveError, ValueError):
    """The normal-equations matrix is singular."""


class GeometryError(ChopsolveError, ValueError):
    """Invalid problem-generation geometry (e.g. kernel bandwidth too large)."""


class InvalidScaleError(ChopsolveError, ValueError):
    """Rescaling factor must be strictly positive."""


class ConfigError(ChopsolveError, ValueError):
    """Invalid experiment configuration."""
