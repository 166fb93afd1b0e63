"""Marčenko-Pastur primitives for the two-class mixture model.

The sample covariance (1/n) X X^T of the mixture has a Marčenko-Pastur bulk
on [(1 - sqrt(c))^2, (1 + sqrt(c))^2], an atom at zero when c > 1, and an
isolated eigenvalue at `lambda_s` once |mu|^4 > c. Everything here is a pure
function of (c, |mu|^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

EDGE_TOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Asymptotic description of the problem.

    c is the dimension ratio p/n, (c1, c2) the class fractions, mu_norm_sq
    the squared mean norm |mu|^2, sigma_sq the initialization variance scale
    and alpha the learning rate.
    """

    c: float
    mu_norm_sq: float
    sigma_sq: float = 0.1
    alpha: float = 0.01
    c1: float = 0.5
    c2: float = 0.5

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"c must be > 0, got {self.c}")
        if not (0 < self.c1 < 1 and 0 < self.c2 < 1) or abs(self.c1 + self.c2 - 1) > 1e-12:
            raise DomainError(f"class fractions must lie in (0,1) and sum to 1, got {self.c1}, {self.c2}")
        if not self.mu_norm_sq > 0:
            raise DomainError(f"mu_norm_sq must be > 0, got {self.mu_norm_sq}")
        if not self.sigma_sq >= 0:
            raise DomainError(f"sigma_sq must be >= 0, got {self.sigma_sq}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")

    @classmethod
    def from_finite(cls, p: int, n1: int, n2: int, mu_norm_sq: float, **kw) -> "ModelParams":
        n = n1 + n2
        return cls(c=p / n, mu_norm_sq=mu_norm_sq, c1=n1 / n, c2=n2 / n, **kw)

    def replace(self, **changes) -> "ModelParams":
        fields = dict(c=self.c, mu_norm_sq=self.mu_norm_sq, sigma_sq=self.sigma_sq,
                      alpha=self.alpha, c1=self.c1, c2=self.c2)
        fields.update(changes)
        return ModelParams(**fields)


@dataclass(frozen=True)
class SpectrumSpec:
    lambda_minus: float
    lambda_plus: float
    lambda_s: float
    spike_mass: float
    zero_mass: float
    has_detached_spike: bool


def mp_edges(c: float) -> tuple[float, float]:
    sc = np.sqrt(c)
    return (1.0 - sc) ** 2, (1.0 + sc) ** 2


def _sqrt_disc(z, c):
    # sqrt((z - l-)(z - l+)) continued analytically off [l-, l+]; behaves like z at infinity
    lm, lp = mp_edges(c)
    return np.sqrt(z - lm) * np.sqrt(z - lp)


def stieltjes_m(z, c: float):
    """Stieltjes transform m(z) of the Marčenko-Pastur law with ratio c.

    Accepts scalars or arrays. Off the real axis the branch satisfies
    Im(z) Im(m) > 0; on the real axis outside the support the real limit is
    returned. Real z inside [lambda_-, lambda_+], and z = 0, are rejected;
    use `boundary_m` on the bulk.
    """
    z = np.asarray(z)
    zc = z.astype(complex)
    real = np.abs(zc.imag) == 0
    if np.any(real):
        lm, lp = mp_edges(c)
        xr = zc.real[real]
        if np.any(xr == 0):
            raise DomainError("stieltjes_m is undefined at z = 0")
        if np.any((xr >= lm - EDGE_TOL) & (xr <= lp + EDGE_TOL)):
            raise DomainError("real z inside the bulk; use boundary_m")
    a = 1.0 - c - zc
    s = _sqrt_disc(zc, c)
    # m = (a + s) / (2cz) = 2 / (a - s); pick the form free of cancellation
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (a + s) / (2.0 * c * zc)
        recip = 2.0 / (a - s)
    m = np.where(np.abs(a + s) >= np.abs(a - s), direct, recip)
    # guard: enforce the Nevanlinna branch condition where it is decidable
    flip = (zc.imag * m.imag) < 0
    if np.any(flip):
        m = np.where(flip, (a - s) / (2.0 * c * zc), m)
    m = np.where(real, m.real + 0j, m)
    if m.ndim == 0:
        m = m[()]
        return float(m.real) if real.all() else complex(m)
    return m.real if real.all() else m


def co_stieltjes_m(z, c: float):
    """Transform of the n x n companion Gram matrix: c m(z) - (1 - c)/z."""
    return c * stieltjes_m(z, c) - (1.0 - c) / np.asarray(z)


def boundary_m(x, c: float):
    """Upper boundary value of m on the open bulk (lambda_-, lambda_+)."""
    x = np.asarray(x, dtype=float)
    lm, lp = mp_edges(c)
    if np.any(x == 0) or np.any((x <= lm + EDGE_TOL) | (x >= lp - EDGE_TOL)):
        raise DomainError("boundary_m needs x strictly inside the bulk")
    re = (1.0 - c - x) / (2.0 * c * x)
    im = np.sqrt((x - lm) * (lp - x)) / (2.0 * c * x)
    out = re + 1j * im
    return complex(out) if out.ndim == 0 else out


def _bulk_sqrt(x, c):
    lm, lp = mp_edges(c)
    inside = (x > lm + EDGE_TOL) & (x < lp - EDGE_TOL)
    root = np.sqrt(np.where(inside, (x - lm) * (lp - x), 0.0))
    return root, inside


def mp_density(x, c: float):
    """Continuous part of the Marčenko-Pastur density; zero off the open bulk."""
    x = np.asarray(x, dtype=float)
    root, inside = _bulk_sqrt(x, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inside & (x > 0), root / (2 * np.pi * c * x), 0.0)
    return float(out) if out.ndim == 0 else out


def spike_location(params: ModelParams) -> SpectrumSpec:
    c, m2 = params.c, params.mu_norm_sq
    lm, lp = mp_edges(c)
    lam_s = c + 1.0 + m2 + c / m2
    detached = m2 * m2 > c
    return SpectrumSpec(
        lambda_minus=lm,
        lambda_plus=lp,
        lambda_s=lam_s,
        spike_mass=(m2 * m2 - c) / m2 if detached else 0.0,
        zero_mass=max(1.0 - 1.0 / c, 0.0),
        has_detached_spike=detached,
    )


def spike_gap(params: ModelParams) -> float:
    """lambda_s - lambda_plus, written as a square to stay exact near |mu|^2 = sqrt(c)."""
    m2 = params.mu_norm_sq
    return float((m2 - np.sqrt(params.c)) ** 2 / m2)


def deformed_measure_density(x, params: ModelParams):
    """Bulk density of the signal measure; the atom at lambda_s is in SpectrumSpec."""
    x = np.asarray(x, dtype=float)
    lam_s = spike_location(params).lambda_s
    root, inside = _bulk_sqrt(x, params.c)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inside, root / (2 * np.pi * (lam_s - x)), 0.0)
    return float(out) if out.ndim == 0 else out


# --- theta-substitution rules -------------------------------------------------
#
# With x = 1 + c - 2 sqrt(c) cos(theta) the bulk maps to theta in [0, pi] and the
# square-root edge factor becomes 2 sqrt(c) sin(theta), so both bulk densities
# turn into smooth integrands in theta.


@lru_cache(maxsize=32)
def _gauss_legendre_0_pi(n: int):
    u, w = np.polynomial.legendre.leggauss(n)
    theta = 0.5 * np.pi * (u + 1.0)
    return theta, 0.5 * np.pi * w


def bulk_abscissae(c: float, n: int):
    """Bulk points x(theta_k), computed without cancellation near lambda_-."""
    theta, w = _gauss_legendre_0_pi(n)
    sc = np.sqrt(c)
    x = (1.0 - sc) ** 2 + 4.0 * sc * np.sin(0.5 * theta) ** 2
    return theta, x, w


def nu_bulk_rule(c: float, n: int = 256):
    """Nodes/weights with sum(w * h(x)) ~ integral of h against the MP bulk."""
    theta, x, w = bulk_abscissae(c, n)
    s2 = np.sin(0.5 * theta) ** 2
    co2 = np.cos(0.5 * theta) ** 2
    if c == 1.0:
        # x = 4 sin^2(theta/2) cancels exactly
        dens = 2.0 * co2 / np.pi
    else:
        dens = 8.0 * s2 * co2 / (np.pi * x)
    return x, w * dens


def mu_bulk_rule(params: ModelParams, n: int = 256):
    """Nodes/weights for the bulk part of the signal measure."""
    c = params.c
    theta, x, w = bulk_abscissae(c, n)
    sc = np.sqrt(c)
    s2 = np.sin(0.5 * theta) ** 2
    co2 = np.cos(0.5 * theta) ** 2
    gap = spike_gap(params)
    if gap == 0.0:
        # lambda_s = lambda_plus: numerator and denominator share the cos^2(theta/2) zero
        dens = 2.0 * sc * s2 / np.pi
    else:
        # lambda_s - x = gap + 4 sqrt(c) cos^2(theta/2)
        dens = 8.0 * c * s2 * co2 / (np.pi * (gap + 4.0 * sc * co2))
    return x, w * dens
