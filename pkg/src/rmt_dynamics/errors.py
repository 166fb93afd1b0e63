"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument lies outside the domain where a formula is defined."""


class QuadratureError(RuntimeError):
    """Two quadrature refinement levels disagree beyond tolerance."""


class ContourError(RuntimeError):
    """Invalid contour, or a contour integral with a non-negligible imaginary part."""


class SingularityError(ValueError):
    """Requested quantity is singular at the given parameters."""


class InfeasibleError(ValueError):
    """Target cannot be reached, even in the infinite-data limit."""


class DegenerateWeightError(ValueError):
    """Weight vector is numerically zero, so the classifier direction is undefined."""


class IDXFormatError(ValueError):
    """Malformed IDX container."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
