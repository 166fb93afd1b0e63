"""Contour-integral evaluation of the error functionals.

This is an independent route to (E, V, E*, V*): the integrands are built
from the Stieltjes transform m(z) off the real axis and integrated along a
closed path enclosing the origin, the bulk and the isolated eigenvalue.
It shares nothing with `theory` beyond `mp.stieltjes_m` and the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContourError
from .mp import ModelParams, mp_edges, spike_location, stieltjes_m

PANEL_NODES = 16
SERIES_CUTOFF = 1e-4
IMAG_TOL = 1e-8
# bound on alpha * t * |Re z| on the left edge; exp(2 * this) multiplies f_t^2 there
LEFT_EDGE_GROWTH = 1.0


@dataclass(frozen=True)
class ContourSpec:
    """Closed positively oriented path.

    A rectangle spans [x_left, x_right] x [-epsilon, epsilon]; a circle has
    its center on the real axis at (x_left + x_right)/2 and passes through
    both ends. `n_nodes` is the node count per horizontal side, or on the
    whole circle.
    """

    kind: str = "rectangle"
    x_left: float = -0.2
    x_right: float = 5.0
    epsilon: float = 0.05
    n_nodes: int = 2048

    def __post_init__(self):
        if self.kind not in ("rectangle", "circle"):
            raise ContourError(f"unknown contour kind {self.kind!r}")
        if not self.x_right > self.x_left:
            raise ContourError("x_right must exceed x_left")
        if self.kind == "rectangle" and not self.epsilon > 0:
            raise ContourError("epsilon must be > 0")
        if self.n_nodes < PANEL_NODES:
            raise ContourError(f"n_nodes must be >= {PANEL_NODES}")


def default_contour(params: ModelParams, t: float, kind: str = "rectangle",
                    epsilon: float = 0.05, n_nodes: int = 2048) -> ContourSpec:
    spec = spike_location(params)
    # lambda_s >= lambda_plus always, and the path must enclose it even without a detached spike
    right = spec.lambda_s + 1.0
    left = 0.2
    at = params.alpha * t
    if at * left > LEFT_EDGE_GROWTH:
        left = max(LEFT_EDGE_GROWTH / at, 1e-3)
    if kind == "circle":
        # trapezoid error decays like (1 - gap/radius)^n; gap is the distance to the origin
        radius = 0.5 * (right + left)
        n_nodes = max(n_nodes, int(np.ceil(40.0 * radius / left)))
    return ContourSpec(kind=kind, x_left=-left, x_right=right, epsilon=epsilon, n_nodes=n_nodes)


def check_contour(params: ModelParams, contour: ContourSpec, margin: float = 1e-8) -> None:
    """Raise ContourError unless the path strictly encloses every singularity."""
    spec = spike_location(params)
    lm, _ = mp_edges(params.c)
    leftmost = min(0.0, lm)
    rightmost = max(spec.lambda_plus, spec.lambda_s)
    if contour.x_left > leftmost - margin:
        raise ContourError(f"contour left end {contour.x_left} does not enclose the origin")
    if contour.x_right < rightmost + margin:
        raise ContourError(f"contour right end {contour.x_right} does not enclose {rightmost}")
    if contour.kind == "rectangle" and contour.epsilon < margin:
        raise ContourError("rectangle too close to the real axis")


def _panel_rule(a: complex, b: complex, panels: int):
    u, w = np.polynomial.legendre.leggauss(PANEL_NODES)
    edges = a + (b - a) * np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = (mid[:, None] + half[:, None] * u[None, :]).ravel()
    dz = (half[:, None] * w[None, :]).ravel()
    return z, dz


def contour_nodes(contour: ContourSpec):
    """Nodes z_k and complex weights dz_k with sum(h(z_k) dz_k) ~ closed integral of h."""
    xl, xr = contour.x_left, contour.x_right
    if contour.kind == "circle":
        n = contour.n_nodes
        center, radius = 0.5 * (xl + xr), 0.5 * (xr - xl)
        phi = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        z = center + radius * np.exp(1j * phi)
        dz = 1j * radius * np.exp(1j * phi) * (2.0 * np.pi / n)
        return z, dz
    eps = contour.epsilon
    length = xr - xl
    horiz = max(contour.n_nodes // PANEL_NODES, int(np.ceil(length / eps)))
    vert = 4
    sides = [
        _panel_rule(complex(xl, -eps), complex(xr, -eps), horiz),
        _panel_rule(complex(xr, -eps), complex(xr, eps), vert),
        _panel_rule(complex(xr, eps), complex(xl, eps), horiz),
        _panel_rule(complex(xl, eps), complex(xl, -eps), vert),
    ]
    z = np.concatenate([s[0] for s in sides])
    dz = np.concatenate([s[1] for s in sides])
    return z, dz


def _g(z, at):
    # (1 - exp(-at z)) / z, entire; series near the removable point
    az = at * z
    small = np.abs(az) < SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = -np.expm1(-az) / z
    series = at * (1.0 - az / 2.0 + az * az / 6.0)
    return np.where(small, series, direct)


@dataclass
class ContourResult:
    E: float
    V: float
    E_star: float
    V_star: float
    imag: np.ndarray  # imaginary parts of the four raw integrals

    def as_array(self) -> np.ndarray:
        return np.array([self.E, self.V, self.E_star, self.V_star])


def contour_functionals(params: ModelParams, t: float, contour: ContourSpec | None = None,
                        imag_tol: float = IMAG_TOL) -> ContourResult:
    if contour is None:
        contour = default_contour(params, t)
    check_contour(params, contour)
    z, dz = contour_nodes(contour)
    m = stieltjes_m(z, params.c)
    m2, c, s2 = params.mu_norm_sq, params.c, params.sigma_sq
    at = params.alpha * t
    g = _g(z, at)
    f2 = np.exp(-2.0 * at * z)
    resolv = 1.0 / ((m2 + c) * m + 1.0)

    integrands = np.stack([
        -g * m2 * m * resolv,
        g * g * resolv - s2 * f2 * m,
        g * resolv,
        z * g * g * resolv - s2 * f2 * z * m,
    ])
    vals = (integrands @ dz) / (2j * np.pi)
    imag = np.abs(vals.imag)
    if np.any(imag > imag_tol):
        raise ContourError(f"contour integral has imaginary part {imag.max():.3e}; branch mishandled?")
    E, V, E_star, V_star = vals.real
    return ContourResult(float(E), float(V), float(E_star), float(V_star), imag)


def contour_E(params: ModelParams, t: float, contour: ContourSpec | None = None) -> float:
    return contour_functionals(params, t, contour).E


def contour_V(params: ModelParams, t: float, contour: ContourSpec | None = None) -> float:
    return contour_functionals(params, t, contour).V


def contour_E_star(params: ModelParams, t: float, contour: ContourSpec | None = None) -> float:
    return contour_functionals(params, t, contour).E_star


def contour_V_star(params: ModelParams, t: float, contour: ContourSpec | None = None) -> float:
    return contour_functionals(params, t, contour).V_star


def stieltjes_mass(c: float, contour: ContourSpec) -> complex:
    """(1/2 pi i) times the closed integral of m(z); equals -1 for a path around the support."""
    z, dz = contour_nodes(contour)
    return complex((stieltjes_m(z, c) @ dz) / (2j * np.pi))
