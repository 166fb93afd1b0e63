"""Gaussian tail function and its inverse."""

import numpy as np
from scipy.special import erfc

from .errors import DomainError


def qfunc(x):
    """Gaussian tail probability Q(x) = P(N(0, 1) > x)."""
    out = 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def qfunc_inv(p: float, tol: float = 1e-12) -> float:
    """Inverse of `qfunc` on (0, 1), by bisection followed by Newton polishing."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"qfunc_inv needs p in (0, 1), got {p}")
    lo, hi = -40.0, 40.0
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        if qfunc(mid) > p:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(50):
        # Q'(x) = -phi(x)
        step = (qfunc(x) - p) / (-np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi))
        x -= step
        if abs(step) < tol * max(1.0, abs(x)):
            break
    return float(x)


def margin_error(mean, var):
    """Misclassification rate Q(mean / sqrt(var)) with the zero-variance convention.

    Negative variances (rounding) are clamped to 0. With zero variance the
    rate is 0 for a positive mean, 1 for a negative mean and 1/2 for a zero mean.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.maximum(np.asarray(var, dtype=float), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(var > 0, mean / np.sqrt(var), np.copysign(np.inf, mean))
    ratio = np.where((var == 0) & (mean == 0), 0.0, ratio)
    out = qfunc(ratio)
    return float(out) if np.ndim(out) == 0 else out
