import numpy as np
import pytest

from mvlq.bsde import (Driver, backward_semigroup, g_expectation_girsanov, girsanov_weights,
                       lq_basis, lq_cost_estimate, lq_cost_streamed, poly2_basis, solve_bsde_lsmc,
                       stream_lq_costs)
from mvlq.lq import FeedbackPolicy, QuadraticValue, value_function
from mvlq.measures import EmpiricalMeasure
from mvlq.mkvsde import generate_common_path, simulate_lq_closed_loop
from mvlq.model import LQModel, random_model
from mvlq.riccati import solve_riccati


def _paths(P=2000, M=20, seed=0, T=1.0):
    path = generate_common_path(0.0, T, M, seed, n_paths=P)
    return path, path.brownian()


def test_girsanov_trivial_cases():
    rng = np.random.default_rng(0)
    chi, WT = rng.normal(size=50), rng.normal(size=50)
    est, se = g_expectation_girsanov(0.0, chi, WT, 1.0)
    assert est == pytest.approx(chi.mean(), rel=1e-14)
    assert se == pytest.approx(chi.std(ddof=1) / np.sqrt(50), rel=1e-14)
    est, se = g_expectation_girsanov(0.4, np.full(50, 2.5), WT, 1.0)
    weights = np.exp(0.4 * WT - 0.08)
    assert est == pytest.approx(2.5 * weights.mean(), rel=1e-14)


def test_girsanov_terminal_brownian():
    # E[W_T exp(beta W_T - beta^2 T / 2)] = beta T
    beta, T = 0.7, 2.0
    WT = np.random.default_rng(1).normal(scale=np.sqrt(T), size=100_000)
    est, se = g_expectation_girsanov(beta, WT, WT, T)
    assert abs(est - beta * T) <= 3 * se
    assert abs(est - beta * T) <= 1e-2 * max(1.0, 3 * se / 1e-2)


@pytest.mark.parametrize("bad", [([], []), ([1.0], [0.0]), ([1.0, 2.0], [0.0])])
def test_girsanov_errors(bad):
    with pytest.raises(ValueError):
        g_expectation_girsanov(0.1, *bad, 1.0)


def test_zero_driver_constant_terminal():
    path, W = _paths(200)
    sol = solve_bsde_lsmc(Driver.zero(), np.full(200, 3.0), W, path.grid, path.increments)
    assert np.allclose(sol.Y, 3.0, atol=1e-12)
    assert np.max(np.abs(sol.Z)) < 1e-10
    assert np.array_equal(sol.Y[:, -1], np.full(200, 3.0))


def test_linear_driver_terminal_brownian():
    beta = 0.5
    path, W = _paths(4000, 20, 3)
    sol = solve_bsde_lsmc(Driver.linear(beta), W[:, -1], W, path.grid, path.increments)
    assert abs(sol.y0 - beta) <= 3 * sol.y0_stderr
    # Z is identically one for Y_t = W_t + beta (T - t)
    assert abs(sol.Z.mean() - 1.0) < 0.02


def test_lsmc_agrees_with_girsanov_on_shared_paths():
    beta = -0.4
    path, W = _paths(4000, 20, 4)
    chi = np.sin(W[:, -1]) + W[:, -1] ** 2
    sol = solve_bsde_lsmc(Driver.linear(beta), chi, W, path.grid, path.increments)
    est, se = g_expectation_girsanov(beta, chi, W[:, -1], 1.0)
    assert abs(sol.y0 - est) <= 3 * np.hypot(se, sol.y0_stderr)


def test_zero_driver_is_plain_expectation():
    path, W = _paths(3000, 10, 5)
    chi = np.exp(-W[:, -1] ** 2)
    sol = solve_bsde_lsmc(Driver.zero(), chi, W, path.grid, path.increments)
    assert abs(sol.y0 - chi.mean()) <= sol.y0_stderr
    # the oracle: E exp(-W^2) = 1 / sqrt(1 + 2T)
    assert abs(sol.y0 - 1 / np.sqrt(3.0)) <= 3 * sol.y0_stderr


def test_semigroup_over_the_full_grid_is_the_full_solve():
    path, W = _paths(1000, 10, 6)
    drv = Driver.from_g(lambda z: 0.3 * np.sin(z), 0.3)
    chi = np.cos(W[:, -1])
    sol = solve_bsde_lsmc(drv, chi, W, path.grid, path.increments)
    y, se = backward_semigroup(drv, chi, W, path.grid, path.increments)
    assert y == sol.y0 and se == sol.y0_stderr


def test_semigroup_on_a_subinterval_chains():
    # G_{0,T}[chi] equals G_{0,s}[Y_s] when Y_s is the regression value at s
    path, W = _paths(2000, 10, 7)
    drv = Driver.linear(0.2)
    chi = W[:, -1] ** 2
    sol = solve_bsde_lsmc(drv, chi, W, path.grid, path.increments)
    y, _ = backward_semigroup(drv, sol.Y[:, 5], W[:, :6], path.grid[:6], path.increments[:, :5])
    assert y == pytest.approx(sol.y0, rel=1e-12)


def test_driver_guards():
    with pytest.raises(ValueError):
        Driver.from_g(lambda z: z + 1.0, 1.0)
    path, W = _paths(20)
    with pytest.raises(ValueError):
        solve_bsde_lsmc(Driver.zero(), W[:, -1], W, path.grid, path.increments)
    with pytest.raises(ValueError):
        solve_bsde_lsmc(Driver.zero(), W[:10, -1], W, path.grid, path.increments, check_size=False)


def test_rank_deficiency_is_recorded():
    path, W = _paths(200, 5, 8)
    feats = np.stack([W, 2 * W], axis=-1)
    sol = solve_bsde_lsmc(Driver.zero(), W[:, -1], feats, path.grid, path.increments)
    assert sol.ridge_steps == [4, 3, 2, 1]


def test_lq_basis_layout():
    x = np.array([[1.0, 2.0, 10.0, 20.0, 30.0]])
    assert np.array_equal(lq_basis(2)(x), [[1, 10, 20, 30, 1, 2, 1, 2, 4]])
    assert poly2_basis(np.array([[2.0]])).tolist() == [[1, 2, 4]]


def test_static_cost_is_half_the_terminal_moment():
    model = LQModel(A=[[0.0]], B=[[0.0]], Q=[[0.0]], R=[[1.0]], G=[[1.0]])
    ric = solve_riccati(model, 10)
    x0 = np.array([[1.0], [2.0], [4.0]])
    path = generate_common_path(0, 1, 10, 0, n_paths=3)
    ens = simulate_lq_closed_loop(model, ric, x0, path)
    J, se = lq_cost_estimate(model, ens)
    assert J == pytest.approx(0.5 * np.mean(x0**2), rel=1e-14)
    assert se == 0.0


def test_beta_zero_is_plain_expectation():
    model = random_model(np.random.default_rng(2), 2, 1, beta=0.0)
    ric = solve_riccati(model, 200)
    path = generate_common_path(0, 1, 20, 1, n_paths=30)
    assert np.all(girsanov_weights(0.0, path) == 1.0)
    x0 = np.random.default_rng(0).normal(size=(10, 2))
    ens = simulate_lq_closed_loop(model, ric, x0, path)
    J, _ = lq_cost_estimate(model, ens)
    J2, _ = lq_cost_estimate(model, ens, beta=0.0)
    assert J == J2


def test_streamed_cost_matches_stored_ensembles():
    for seed in range(3):
        model = random_model(np.random.default_rng(seed), 1 + seed, 1 + seed % 2)
        ric = solve_riccati(model, 200)
        x0 = np.random.default_rng(seed).normal(size=(25, model.n))
        path = generate_common_path(0, 1, 40, seed, n_paths=20)
        ens = simulate_lq_closed_loop(model, ric, x0, path)
        a = lq_cost_estimate(model, ens)
        b = lq_cost_streamed(model, FeedbackPolicy(QuadraticValue(ric)), x0, path)
        assert a[0] == pytest.approx(b[0], rel=1e-12) and a[1] == pytest.approx(b[1], rel=1e-9)


def test_closed_loop_cost_matches_value():
    model = random_model(np.random.default_rng(11), 2, 1)
    ric = solve_riccati(model, 1000)
    x0 = np.random.default_rng(1).normal(0.5, 1.0, size=(500, 2))
    path = generate_common_path(0, 1, 100, 2, n_paths=400)
    c = stream_lq_costs(model, FeedbackPolicy(QuadraticValue(ric)), x0, path, halve=False).costs
    V = value_function(QuadraticValue(ric), 0.0, EmpiricalMeasure(x0))
    se = c.std(ddof=1) / np.sqrt(c.size)
    assert abs(c.mean() - V) <= max(3 * se, 0.02 * abs(V))


def test_solution_csv(tmp_path):
    path, W = _paths(100, 4, 9)
    sol = solve_bsde_lsmc(Driver.zero(), W[:, -1], W, path.grid, path.increments)
    sol.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "t,Y_mean,Y_stderr,Z_mean" and len(lines) == 6
    assert lines[-1].endswith(",nan")


def test_bootstrap_identity_resample_reproduces_y0():
    from mvlq.bsde import _bootstrap_y0
    path, W = _paths(500, 10, 12)
    drv = Driver.linear(0.3)
    chi = np.sin(W[:, -1]) + W[:, -1] ** 2
    sol = solve_bsde_lsmc(drv, chi, W, path.grid, path.increments)
    y = _bootstrap_y0(drv, chi, W[:, :, None], path.grid, np.diff(path.grid), path.increments, None,
                      poly2_basis, np.arange(500)[None])
    assert y[0] == pytest.approx(sol.y0, abs=1e-9)


def test_bootstrap_stderr_tracks_the_spread_over_seeds():
    # 150 seeds gave a ratio of 0.97; 80 keep the test quick with room for the sd's own noise
    drv = Driver.linear(0.3)
    ys, ses = [], []
    for seed in range(80):
        path, W = _paths(300, 10, 5000 + seed)
        chi = 2 * W[:, -1] + np.sin(W[:, -1])
        sol = solve_bsde_lsmc(drv, chi, W, path.grid, path.increments, bootstrap=100, seed=seed)
        ys.append(sol.y0)
        ses.append(sol.y0_stderr)
    ratio = np.std(ys, ddof=1) / np.mean(ses)
    assert 0.75 < ratio < 1.3
