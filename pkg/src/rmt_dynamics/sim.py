"""Finite-size simulation of gradient-flow training on a Gaussian mixture.

The flow dw/dt = (alpha/n) X (y - X^T w) is solved exactly through a thin
SVD of the data matrix: with (1/n) X X^T = U diag(lam) U^T on its range,

    w(t) = P_null w0 + U [exp(-alpha t lam) U^T w0 + g_t(lam) U^T (X y / n)],
    g_t(lam) = (1 - exp(-alpha t lam)) / lam,   g_t(0) = alpha t,

which covers p < n, p = n and p > n alike.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import threading

import numpy as np

from .errors import DegenerateWeightError, DomainError
from .special import qfunc


def make_rng(seed, stream: int = 0) -> np.random.Generator:
    """Independent PCG64 stream `stream` derived from an integer seed."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # p x n, class 1 columns first
    y: np.ndarray
    mu: np.ndarray
    n1: int
    n2: int
    seed: object = None

    @property
    def p(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]


def spike_mean(p: int, mu_norm_sq: float) -> np.ndarray:
    """Mean vector [|mu|; 0, ..., 0]."""
    mu = np.zeros(p)
    mu[0] = np.sqrt(mu_norm_sq)
    return mu


def sample_dataset(p: int, n1: int, n2: int, mu, seed) -> Dataset:
    if min(p, n1, n2) < 1:
        raise DomainError("p, n1 and n2 must all be >= 1")
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (p,):
        raise DomainError(f"mu must have shape ({p},), got {mu.shape}")
    rng = make_rng(seed, 0)
    n = n1 + n2
    X = rng.standard_normal((p, n))
    X[:, :n1] -= mu[:, None]
    X[:, n1:] += mu[:, None]
    y = np.concatenate([-np.ones(n1), np.ones(n2)])
    return Dataset(X=X, y=y, mu=mu, n1=n1, n2=n2, seed=seed)


def sample_init(p: int, sigma_sq: float, seed) -> np.ndarray:
    """Gaussian initialization with i.i.d. N(0, sigma_sq / p) entries."""
    if sigma_sq < 0:
        raise DomainError("sigma_sq must be >= 0")
    if sigma_sq == 0:
        return np.zeros(p)
    return make_rng(seed, 1).standard_normal(p) * np.sqrt(sigma_sq / p)


@dataclass
class SimRun:
    """Cached spectral data of one dataset plus an initialization."""

    eigenvalues: np.ndarray  # nonzero-block eigenvalues of (1/n) X X^T, length min(p, n)
    eigenvectors: np.ndarray  # p x min(p, n), orthonormal columns
    n_zero: int  # extra zero eigenvalues when p > n
    w0: np.ndarray
    proj_w0: np.ndarray
    proj_b: np.ndarray  # U^T (X y / n)
    w0_null: np.ndarray  # part of w0 the flow never moves
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def build(cls, dataset: Dataset, w0: np.ndarray) -> "SimRun":
        X, y = dataset.X, dataset.y
        n = X.shape[1]
        U, s, Wt = np.linalg.svd(X, full_matrices=False)
        lam = np.maximum(s * s / n, 0.0)
        w0 = np.asarray(w0, dtype=float)
        proj_w0 = U.T @ w0
        proj_b = s * (Wt @ y) / n
        return cls(
            eigenvalues=lam,
            eigenvectors=U,
            n_zero=max(X.shape[0] - n, 0),
            w0=w0,
            proj_w0=proj_w0,
            proj_b=proj_b,
            w0_null=w0 - U @ proj_w0,
        )

    def with_init(self, w0: np.ndarray) -> "SimRun":
        """Same data, different initialization; the decomposition is reused."""
        w0 = np.asarray(w0, dtype=float)
        proj_w0 = self.eigenvectors.T @ w0
        return SimRun(self.eigenvalues, self.eigenvectors, self.n_zero, w0, proj_w0, self.proj_b,
                      w0 - self.eigenvectors @ proj_w0)

    @property
    def spectrum(self) -> np.ndarray:
        """All p eigenvalues of (1/n) X X^T, ascending."""
        return np.sort(np.concatenate([np.zeros(self.n_zero), self.eigenvalues]))


def _g(lam, at):
    lam = np.asarray(lam, dtype=float)
    x = at * lam
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = -np.expm1(-x) / lam
    return np.where(np.abs(x) < 1e-8, at * (1.0 - 0.5 * x), direct)


def weights_at(run: SimRun, times, alpha: float) -> np.ndarray:
    """w(t) for every t in `times`, stacked as columns of a p x T array."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("t must be >= 0")
    at = alpha * times[None, :]
    lam = run.eigenvalues[:, None]
    coeffs = np.exp(-at * lam) * run.proj_w0[:, None] + _g(lam, at) * run.proj_b[:, None]
    W = run.eigenvectors @ coeffs + run.w0_null[:, None]
    W[:, times == 0] = run.w0[:, None]  # exact, not up to rounding
    return W


def weight_at(run: SimRun, t: float, alpha: float) -> np.ndarray:
    key = (float(t), float(alpha))
    with run._lock:
        hit = run._cache.get(key)
    if hit is None:
        hit = weights_at(run, [t], alpha)[:, 0]
        hit.setflags(write=False)
        with run._lock:
            run._cache[key] = hit
    return hit


def least_squares_weight(dataset: Dataset) -> np.ndarray:
    """Minimal-norm least-squares solution pinv(X X^T / n) X y / n."""
    return np.linalg.pinv(dataset.X.T) @ dataset.y


def loss(dataset: Dataset, w: np.ndarray) -> float:
    r = dataset.y - dataset.X.T @ w
    return float(r @ r) / (2 * dataset.n)


def gen_error_of(w: np.ndarray, mu: np.ndarray) -> float:
    """Exact misclassification rate of sign(w^T x) on a fresh Gaussian test point."""
    norm = np.linalg.norm(w)
    if norm < 1e-14:
        raise DegenerateWeightError("weight vector is numerically zero")
    return qfunc(mu @ w / norm)


def test_set_error(w: np.ndarray, X_test: np.ndarray, y_test: np.ndarray) -> float:
    """Monte Carlo error on held-out columns; used where the Gaussian law does not hold."""
    return float(np.mean(np.sign(w @ X_test) != y_test))


def error_trajectory(run: SimRun, dataset: Dataset, times, alpha: float, X_test=None, y_test=None):
    """(train_error, gen_error) arrays over `times`.

    gen_error is analytic given w(t) unless a test set is passed.
    """
    W = weights_at(run, times, alpha)
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms < 1e-14):
        raise DegenerateWeightError("weight vector is numerically zero")
    out = dataset.X.T @ W
    train = np.mean(np.sign(out) != dataset.y[:, None], axis=0)
    if X_test is None:
        gen = np.atleast_1d(qfunc((dataset.mu @ W) / norms))
    else:
        gen = np.mean(np.sign(W.T @ X_test) != np.asarray(y_test)[None, :], axis=1)
    return train, gen


def empirical_errors(run: SimRun, dataset: Dataset, t: float, alpha: float) -> tuple[float, float]:
    train, gen = error_trajectory(run, dataset, [t], alpha)
    return float(train[0]), float(gen[0])


@dataclass
class Spectrum:
    edges: np.ndarray
    mass: np.ndarray  # fraction of eigenvalues per bin
    eigenvalues: np.ndarray
    top_eigenvalue: float


def empirical_spectrum(dataset: Dataset, bins=60, range_=None) -> Spectrum:
    n = dataset.n
    eig = np.sort(np.linalg.svd(dataset.X, compute_uv=False) ** 2 / n)
    eig = np.concatenate([np.zeros(max(dataset.p - n, 0)), eig])
    mass, edges = np.histogram(eig, bins=bins, range=range_)
    return Spectrum(edges=edges, mass=mass / eig.size, eigenvalues=eig, top_eigenvalue=float(eig[-1]))


# --- ensembles ---------------------------------------------------------------


@dataclass
class EnsembleResult:
    times: np.ndarray
    seeds: list
    train: np.ndarray  # per-seed rows
    gen: np.ndarray

    @property
    def gen_mean(self):
        return self.gen.mean(axis=0)

    @property
    def gen_std(self):
        return self.gen.std(axis=0, ddof=1) if len(self.seeds) > 1 else np.zeros(self.times.size)

    @property
    def train_mean(self):
        return self.train.mean(axis=0)

    @property
    def train_std(self):
        return self.train.std(axis=0, ddof=1) if len(self.seeds) > 1 else np.zeros(self.times.size)


def _seed_row(dataset_fn, sigma_sq, alpha, times, seed, antithetic):
    drawn = dataset_fn(seed)
    data, X_test, y_test = drawn if isinstance(drawn, tuple) else (drawn, None, None)
    w0 = sample_init(data.p, sigma_sq, seed)
    run = SimRun.build(data, w0)
    train, gen = error_trajectory(run, data, times, alpha, X_test, y_test)
    if antithetic and sigma_sq > 0:
        # (X, w0) and (X, -w0) are equally likely; averaging the pair cancels
        # the leading-order initialization noise
        mirror = run.with_init(-w0)
        train2, gen2 = error_trajectory(mirror, data, times, alpha, X_test, y_test)
        train, gen = 0.5 * (train + train2), 0.5 * (gen + gen2)
    return train, gen


def ensemble(dataset_fn, sigma_sq: float, alpha: float, times, seeds,
             antithetic: bool = True, workers: int | None = None) -> EnsembleResult:
    """Error trajectories over seeds; rows are ordered by seed.

    `dataset_fn(seed)` returns a Dataset, or (Dataset, X_test, y_test) to
    measure the generalization error on held-out columns instead.
    """
    times = np.asarray(times, dtype=float)
    seeds = sorted(seeds)
    if not seeds:
        raise DomainError("seed list is empty")

    def task(seed):
        return _seed_row(dataset_fn, sigma_sq, alpha, times, seed, antithetic)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(task, seeds))
    else:
        rows = [task(s) for s in seeds]
    return EnsembleResult(
        times=times,
        seeds=seeds,
        train=np.array([r[0] for r in rows]),
        gen=np.array([r[1] for r in rows]),
    )


def simulate_ensemble(p: int, n1: int, n2: int, mu, sigma_sq: float, alpha: float, times, seeds,
                      antithetic: bool = True, workers: int | None = None) -> EnsembleResult:
    """`ensemble` over freshly sampled Gaussian-mixture datasets."""
    mu = np.asarray(mu, dtype=float)
    return ensemble(lambda s: sample_dataset(p, n1, n2, mu, s), sigma_sq, alpha, times, seeds,
                    antithetic=antithetic, workers=workers)
