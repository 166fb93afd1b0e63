import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from rmt_dynamics.errors import DegenerateWeightError, DomainError
from rmt_dynamics.mp import ModelParams, mp_density, mp_edges, spike_location
from rmt_dynamics.sim import (
    SimRun, empirical_errors, empirical_spectrum, ensemble, error_trajectory, gen_error_of,
    least_squares_weight, loss, sample_dataset, sample_init, simulate_ensemble, spike_mean,
    test_set_error as held_out_error, weight_at, weights_at,
)
from rmt_dynamics.special import qfunc
from rmt_dynamics.theory import error_curve


def toy(p, n1, n2, m2=1.0, s2=0.5, seed=0):
    ds = sample_dataset(p, n1, n2, spike_mean(p, m2), seed)
    return ds, SimRun.build(ds, sample_init(p, s2, seed))


def rk4(ds, w0, alpha, t_end, h=1e-3):
    """Classical fixed-step Runge-Kutta on dw/dt = (alpha/n) X (y - X^T w)."""
    X, y, n = ds.X, ds.y, ds.n
    f = lambda w: alpha / n * X @ (y - X.T @ w)
    w = w0.copy()
    steps = int(round(t_end / h))
    for _ in range(steps):
        k1 = f(w)
        k2 = f(w + 0.5 * h * k1)
        k3 = f(w + 0.5 * h * k2)
        k4 = f(w + h * k3)
        w = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return w


def test_rk4_toy_instance():
    ds, run = toy(2, 2, 2, seed=3)
    for t in (0.1, 1.0, 3.0):
        assert np.max(np.abs(weight_at(run, t, 0.5) - rk4(ds, run.w0, 0.5, t))) < 1e-6


@pytest.mark.parametrize("p, n1, n2", [(8, 4, 4), (16, 8, 8), (16, 4, 4), (5, 6, 5), (16, 1, 1)])
def test_matches_adaptive_integrator(p, n1, n2):
    ds, run = toy(p, n1, n2, seed=p + n1)
    alpha = 0.2
    X, y, n = ds.X, ds.y, ds.n
    rhs = lambda _, w: alpha / n * X @ (y - X.T @ w)
    times = [0.1, 1.0, 10.0, 100.0]
    sol = solve_ivp(rhs, (0, 100), run.w0, method="DOP853", t_eval=times, rtol=1e-12, atol=1e-13)
    W = weights_at(run, times, alpha)
    assert np.max(np.abs(W - sol.y)) < 1e-6


def test_initial_weight_is_exact():
    _, run = toy(10, 4, 4)
    assert np.array_equal(weight_at(run, 0.0, 0.3), run.w0)


@pytest.mark.parametrize("p, n1, n2", [(6, 10, 10), (20, 5, 5), (10, 5, 5)])
def test_long_time_limit(p, n1, n2):
    ds, run = toy(p, n1, n2, s2=0.0)
    lam_min = run.eigenvalues[run.eigenvalues > 1e-10].min()
    t = 60 / (0.1 * lam_min)
    assert np.max(np.abs(weight_at(run, t, 0.1) - least_squares_weight(ds))) < 1e-8


def test_null_space_part_is_frozen():
    ds, run = toy(20, 4, 4)
    w = weight_at(run, 1e6, 1.0)
    assert np.allclose(w - least_squares_weight(ds), run.w0_null, atol=1e-8)


def test_loss_is_non_increasing():
    ds, run = toy(30, 20, 20)
    t = np.linspace(0, 500, 101)
    losses = [loss(ds, w) for w in weights_at(run, t, 0.05).T]
    assert np.all(np.diff(losses) <= 1e-12)


def test_run_invariants():
    ds, run = toy(40, 10, 15)
    U = run.eigenvectors
    assert np.allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-10)
    assert np.all(run.eigenvalues >= 0)
    assert run.spectrum.size == 40 and run.n_zero == 15
    gram = ds.X @ ds.X.T / ds.n
    assert np.allclose(np.sort(np.linalg.eigvalsh(gram)), run.spectrum, atol=1e-10)


def test_weight_cache_is_stable():
    _, run = toy(10, 4, 4)
    a = weight_at(run, 5.0, 0.1)
    b = weight_at(run, 5.0, 0.1)
    assert a is b and not a.flags.writeable


def test_dataset_layout_and_determinism():
    mu = spike_mean(5, 4.0)
    a = sample_dataset(5, 3, 4, mu, 11)
    b = sample_dataset(5, 3, 4, mu, 11)
    assert np.array_equal(a.X, b.X)
    assert list(a.y) == [-1, -1, -1, 1, 1, 1, 1]
    assert a.p == 5 and a.n == 7
    assert not np.array_equal(a.X, sample_dataset(5, 3, 4, mu, 12).X)
    with pytest.raises(DomainError):
        sample_dataset(0, 3, 4, mu, 0)
    with pytest.raises(DomainError):
        sample_dataset(4, 3, 4, mu, 0)


def test_class_means():
    p, n1 = 20, 4000
    mu = np.linspace(-1, 1, p)
    ds = sample_dataset(p, n1, n1, mu, 5)
    tol = 3 / np.sqrt(n1)
    assert np.all(np.abs(ds.X[:, :n1].mean(axis=1) + mu) < tol * 1.5)
    assert np.all(np.abs(ds.X[:, n1:].mean(axis=1) - mu) < tol * 1.5)


def test_init():
    assert not sample_init(7, 0.0, 1).any()
    w = sample_init(10_000, 0.1, 2)
    assert 0.094 <= w @ w <= 0.106
    assert np.array_equal(w, sample_init(10_000, 0.1, 2))
    with pytest.raises(DomainError):
        sample_init(3, -1.0, 0)


def test_gen_error_of_aligned_weight():
    mu = spike_mean(10, 2.25)
    assert gen_error_of(3 * mu, mu) == pytest.approx(qfunc(1.5), rel=1e-14)
    with pytest.raises(DegenerateWeightError):
        gen_error_of(np.zeros(10), mu)


def test_degenerate_weight_at_zero_init():
    ds, run = toy(5, 3, 3, s2=0.0)
    with pytest.raises(DegenerateWeightError):
        empirical_errors(run, ds, 0.0, 0.1)
    train, gen = empirical_errors(run, ds, 1.0, 0.1)
    assert 0 <= train <= 1 and 0 <= gen <= 0.5


def test_train_error_counts_signs():
    ds, run = toy(6, 5, 5, m2=9.0)
    w = weight_at(run, 50.0, 0.5)
    train, _ = empirical_errors(run, ds, 50.0, 0.5)
    assert train == np.mean(np.sign(ds.X.T @ w) != ds.y)


def test_test_set_mode_agrees_with_analytic():
    p = 30
    ds, run = toy(p, 40, 40, m2=1.0, seed=9)
    test = sample_dataset(p, 100_000, 100_000, ds.mu, 99)
    train_a, gen_a = error_trajectory(run, ds, [20.0], 0.1)
    train_b, gen_b = error_trajectory(run, ds, [20.0], 0.1, test.X, test.y)
    assert train_a == train_b
    assert abs(gen_a[0] - gen_b[0]) < 4 * np.sqrt(gen_a[0] / 200_000)
    w = weight_at(run, 20.0, 0.1)
    assert held_out_error(w, test.X, test.y) == gen_b[0]


def test_gen_error_at_init_is_half():
    r = simulate_ensemble(64, 64, 64, spike_mean(64, 4.0), 0.1, 0.01, [0.0], range(20), antithetic=False)
    assert abs(r.gen_mean[0] - 0.5) < 3 / np.sqrt(20)


def test_ensemble_order_and_workers():
    args = (32, 16, 16, spike_mean(32, 4.0), 0.1, 0.01, [0.0, 10.0, 50.0])
    a = simulate_ensemble(*args, [3, 1, 2])
    b = simulate_ensemble(*args, [1, 2, 3], workers=3)
    assert a.seeds == [1, 2, 3]
    assert np.array_equal(a.gen, b.gen) and np.array_equal(a.train, b.train)
    with pytest.raises(DomainError):
        simulate_ensemble(*args, [])


def test_antithetic_pair_is_average_of_mirrors():
    p = 16
    mu = spike_mean(p, 2.0)
    r = simulate_ensemble(p, 8, 8, mu, 0.5, 0.1, [0.0, 3.0], [4])
    ds = sample_dataset(p, 8, 8, mu, 4)
    w0 = sample_init(p, 0.5, 4)
    _, g1 = error_trajectory(SimRun.build(ds, w0), ds, [0.0, 3.0], 0.1)
    _, g2 = error_trajectory(SimRun.build(ds, -w0), ds, [0.0, 3.0], 0.1)
    assert np.allclose(r.gen[0], 0.5 * (g1 + g2))


def test_ensemble_accepts_held_out_sets():
    p = 10
    mu = spike_mean(p, 4.0)

    def draw(seed):
        ds = sample_dataset(p, 10, 10, mu, seed)
        test = sample_dataset(p, 500, 500, mu, seed + 1000)
        return ds, test.X, test.y

    r = ensemble(draw, 0.1, 0.1, [5.0], [0, 1])
    assert r.gen.shape == (2, 1) and np.all(np.isfinite(r.gen))


def test_single_seed_std_is_zero():
    r = simulate_ensemble(8, 4, 4, spike_mean(8, 1.0), 0.1, 0.1, [1.0, 2.0], [0])
    assert np.all(r.gen_std == 0) and np.all(r.train_std == 0)


def test_ensemble_tracks_theory_mid_curve():
    p, n = 256, 512
    r = simulate_ensemble(p, 256, 256, spike_mean(p, 4.0), 0.1, 0.01, [102.0], range(50))
    theory = error_curve(ModelParams.from_finite(p, 256, 256, 4.0), [102.0]).gen_error[0]
    assert r.gen_mean[0] == pytest.approx(0.0475, abs=5e-3)
    assert abs(r.gen_mean[0] - theory) < 5e-3


def mp_cdf(x, c):
    lm, _ = mp_edges(c)
    return quad(lambda s: mp_density(s, c), lm, x, limit=200)[0] if x > lm else 0.0


def test_spectrum_against_law():
    p, n = 512, 1024
    mu = spike_mean(p, 2.25)
    spec = empirical_spectrum(sample_dataset(p, n // 2, n // 2, mu, 0), bins=40)
    lam_s = spike_location(ModelParams(0.5, 2.25)).lambda_s
    assert abs(spec.top_eigenvalue - lam_s) < 0.1
    assert spec.mass.sum() == pytest.approx(1.0)
    bulk = spec.eigenvalues[:-1]
    ecdf = np.arange(1, bulk.size + 1) / bulk.size
    cdf = np.array([mp_cdf(x, 0.5) for x in bulk[::16]])
    assert np.max(np.abs(ecdf[::16] - cdf)) < 0.05


def test_no_outlier_without_signal():
    p, n = 512, 1024
    lp = mp_edges(0.5)[1]
    for seed in range(10):
        spec = empirical_spectrum(sample_dataset(p, n // 2, n // 2, np.zeros(p), seed))
        assert spec.top_eigenvalue < lp + 0.05
        assert abs(spec.top_eigenvalue - lp) < 0.1


def test_spectrum_counts_zero_eigenvalues():
    ds = sample_dataset(40, 5, 5, spike_mean(40, 1.0), 0)
    spec = empirical_spectrum(ds, bins=5)
    assert spec.eigenvalues.size == 40
    assert spec.mass[0] >= 30 / 40


@pytest.mark.slow
def test_agreement_improves_with_size():
    # stated property: the 50-seed mean moves toward theory at every grid t as (p, n) = k (256, 512) grows
    times = np.array([6.0, 30.0, 96.0, 294.0])
    theory = error_curve(ModelParams(0.5, 4.0), times).gen_error
    gaps = []
    for k in (1, 2, 4):
        p = 256 * k
        r = simulate_ensemble(p, p, p, spike_mean(p, 4.0), 0.1, 0.01, times, range(50))
        gaps.append(np.abs(r.gen_mean - theory))
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps, axis=0) <= 0), f"|sim - theory| by k (rows) and t (cols):\n{gaps}"
