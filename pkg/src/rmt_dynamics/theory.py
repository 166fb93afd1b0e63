"""Deterministic error curves of gradient-flow training.

Mean and variance functionals of the classifier output are evaluated as
real integrals against the Marčenko-Pastur law `nu` and the signal
measure `mu` (bulk + atom at lambda_s); see `mp.nu_bulk_rule` and
`mp.mu_bulk_rule` for the quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
import warnings

import numpy as np

from .errors import DomainError, InfeasibleError, QuadratureError, SingularityError
from .mp import ModelParams, mu_bulk_rule, nu_bulk_rule, spike_location
from .special import margin_error, qfunc, qfunc_inv

DEFAULT_NODES = 256
MAX_NODES = 1 << 15
QUAD_RTOL = 1e-10


class SingularityWarning(RuntimeWarning):
    pass


def f_t(x, t, alpha):
    """exp(-alpha t x)."""
    return np.exp(-alpha * np.asarray(t) * np.asarray(x))


def _one_minus_f_over_x(x, at):
    # (1 - exp(-at x)) / x, equal to `at` at x = 0
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.expm1(-at * x) / x
    return np.where(x == 0, at * np.ones_like(out), out)


def _raw_functionals(params: ModelParams, times: np.ndarray, n: int):
    """(E, V, E*, V*) on a vector of times with an n-node rule."""
    spec = spike_location(params)
    m2, c, s2 = params.mu_norm_sq, params.c, params.sigma_sq
    k = (m2 + c) / m2
    at = params.alpha * times[:, None]

    xm, wm = mu_bulk_rule(params, n)
    xn, wn = nu_bulk_rule(c, n)

    g = _one_minus_f_over_x(xm[None, :], at)
    gs = _one_minus_f_over_x(spec.lambda_s, at[:, 0])
    fn2 = np.exp(-2.0 * at * xn[None, :])
    mass = spec.spike_mass

    E = g @ wm + mass * gs
    V = k * ((g * g) @ wm + mass * gs * gs) + s2 * (fn2 @ wn + spec.zero_mass)
    E_star = k * E
    V_star = k * ((g * g) @ (xm * wm) + mass * gs * gs * spec.lambda_s) + s2 * (fn2 @ (xn * wn))
    return np.stack([E, V, E_star, V_star])


def functionals(params: ModelParams, times, n_nodes: int = DEFAULT_NODES, rtol: float = QUAD_RTOL):
    """Return an array of shape (4, len(times)) holding E, V, E*, V*.

    The node count is doubled until two consecutive levels agree to `rtol`.
    Raises QuadratureError when MAX_NODES is reached without agreement.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("training times must be >= 0")
    n = n_nodes
    prev = _raw_functionals(params, times, n)
    while True:
        n *= 2
        cur = _raw_functionals(params, times, n)
        err = np.abs(cur - prev)
        if np.all(err <= rtol * np.maximum(1.0, np.abs(cur))):
            return cur
        if n >= MAX_NODES:
            raise QuadratureError(
                f"functionals not converged at {n} nodes (max change {err.max():.3e})"
            )
        prev = cur


def generalization_functionals(params: ModelParams, t: float) -> tuple[float, float]:
    E, V, _, _ = functionals(params, [t])[:, 0]
    return float(E), float(V)


def training_functionals(params: ModelParams, t: float) -> tuple[float, float]:
    _, _, E_star, V_star = functionals(params, [t])[:, 0]
    return float(E_star), float(V_star)


@dataclass
class ErrorCurve:
    times: np.ndarray
    E: np.ndarray
    V: np.ndarray
    E_star: np.ndarray
    V_star: np.ndarray
    gen_error: np.ndarray
    train_error: np.ndarray


def error_curve(params: ModelParams, times) -> ErrorCurve:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise DomainError("time grid must be non-empty and strictly increasing")
    E, V, E_star, V_star = functionals(params, times)
    return ErrorCurve(
        times=times,
        E=E,
        V=V,
        E_star=E_star,
        V_star=V_star,
        gen_error=np.atleast_1d(margin_error(E, V)),
        train_error=np.atleast_1d(margin_error(E_star, V_star - E_star**2)),
    )


def optimal_bound(params: ModelParams) -> float:
    """Lowest reachable generalization error Q(|mu|^2 / sqrt(|mu|^2 + c))."""
    m2 = params.mu_norm_sq
    return qfunc(m2 / np.sqrt(m2 + params.c))


def minimum_sample_ratio(mu_norm_sq: float, target_error: float) -> float:
    """Largest c = p/n whose optimal bound still meets `target_error`.

    Callers turn this into a sample size via n >= p / c.
    """
    if not 0.0 < target_error < 0.5:
        raise DomainError("target_error must lie in (0, 0.5)")
    floor = qfunc(np.sqrt(mu_norm_sq))
    if target_error < floor:
        raise InfeasibleError(
            f"target {target_error} is below Q(|mu|) = {floor:.6g}, unreachable even with infinite data"
        )
    q = qfunc_inv(target_error)
    return mu_norm_sq**2 / q**2 - mu_norm_sq


@dataclass
class TaylorCurve:
    times: np.ndarray
    E_tilde: np.ndarray
    V_tilde: np.ndarray
    approx_gen_error: np.ndarray


def taylor_curve(params: ModelParams, times) -> TaylorCurve:
    """Small-time approximation of (E, V) and the resulting error."""
    t = np.asarray(times, dtype=float)
    m2, c, s2, a = params.mu_norm_sq, params.c, params.sigma_sq, params.alpha
    E_t = m2 * a * t
    V_t = (m2 + c + c * s2) * (a * t) ** 2 + s2 * (a * t - 1.0) ** 2
    return TaylorCurve(times=t, E_tilde=E_t, V_tilde=V_t, approx_gen_error=np.atleast_1d(margin_error(E_t, V_t)))


def least_squares_limit(params: ModelParams) -> tuple[float, float]:
    """Alignment mu^T w_LS / |w_LS| and its error Q(.) for the least-squares solution.

    c = 1 is where |w_LS| diverges. There the alignment formula evaluates to
    0 (error 1/2), which is returned together with a SingularityWarning.
    """
    c, m2 = params.c, params.mu_norm_sq
    if c == 1.0:
        warnings.warn("c = 1 is a singular point of the least-squares solution", SingularityWarning)
    ratio = m2 / np.sqrt(m2 + c) * np.sqrt(1.0 - min(c, 1.0 / c))
    return float(ratio), qfunc(ratio)


def least_squares_ratio_strict(params: ModelParams) -> float:
    """As `least_squares_limit` but raising SingularityError at c = 1."""
    if params.c == 1.0:
        raise SingularityError("c = 1 is a singular point of the least-squares solution")
    return least_squares_limit(params)[0]


def c_zero_functionals(mu_norm_sq: float, sigma_sq: float, alpha: float, t):
    """Closed-form (E, V) in the limit p/n -> 0."""
    t = np.asarray(t, dtype=float)
    m2 = mu_norm_sq
    h = -np.expm1(-alpha * t * (1.0 + m2)) / (1.0 + m2)
    E = m2 * h
    V = m2 * h * h + sigma_sq * np.exp(-2.0 * alpha * t)
    if E.ndim == 0:
        return float(E), float(V)
    return E, V


# --- early stopping --------------------------------------------------------

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_min(fun, a: float, b: float, tol: float):
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def _stop_search(neg_ratio, t_max: float, tol: float):
    if not t_max > 0:
        raise DomainError("t_max must be > 0")
    if t_max > 1.0:
        grid = np.concatenate([[0.0], np.logspace(0.0, np.log10(t_max), 30)])
    else:
        grid = np.linspace(0.0, t_max, 31)
    vals = np.array([neg_ratio(t) for t in grid])
    i = int(np.argmin(vals))
    if i == len(grid) - 1:
        # still improving at the horizon
        lo = grid[i - 1]
        t_opt = _golden_min(neg_ratio, lo, t_max, tol)
        if neg_ratio(t_max) <= neg_ratio(t_opt):
            t_opt = t_max
        return t_opt
    lo = grid[max(i - 1, 0)]
    hi = grid[i + 1]
    return _golden_min(neg_ratio, lo, hi, tol)


def _neg_ratio(E, V):
    if V <= 0:
        return 0.0 if E == 0 else -np.sign(E) * np.inf
    return -E / np.sqrt(V)


def optimal_stopping(params: ModelParams, t_max: float, tol: float = 1e-3) -> tuple[float, float]:
    """Training time in [0, t_max] minimizing the generalization error, and that error."""

    def neg_ratio(t):
        E, V = generalization_functionals(params, t)
        return _neg_ratio(E, V)

    t_opt = _stop_search(neg_ratio, t_max, tol)
    E, V = generalization_functionals(params, t_opt)
    return float(t_opt), margin_error(E, V)


def c_zero_optimal_stopping(mu_norm_sq: float, sigma_sq: float, alpha: float, t_max: float, tol: float = 1e-3):
    """`optimal_stopping` for the p/n -> 0 limit."""

    def neg_ratio(t):
        return _neg_ratio(*c_zero_functionals(mu_norm_sq, sigma_sq, alpha, t))

    t_opt = _stop_search(neg_ratio, t_max, tol)
    return float(t_opt), margin_error(*c_zero_functionals(mu_norm_sq, sigma_sq, alpha, t_opt))
