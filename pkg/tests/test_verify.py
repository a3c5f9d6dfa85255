import csv

import numpy as np
import pytest

from mvlq import verify as V
from mvlq.bsde import Driver, solve_bsde_lsmc, stream_lq_costs
from mvlq.lq import FeedbackPolicy, QuadraticValue, random_perturbation
from mvlq.measures import EmpiricalMeasure, wasserstein2
from mvlq.mkvsde import generate_common_path
from mvlq.model import LQModel
from mvlq.riccati import solve_riccati

SMALL = V.Sizes(particles=200, paths=100, steps=50, riccati_steps=400, gap_paths=200, perturbations=3,
                trials=10, comparison_paths=400, batches=10, batch_sizes=(50, 200, 800),
                stab_particles=32, stab_paths=10, stab_steps=20, bootstrap=50)


@pytest.fixture(scope="module")
def scalar_ric(scalar_model):
    return solve_riccati(scalar_model, 1000)


def test_sizes_reject_nonpositive():
    with pytest.raises(ValueError):
        V.Sizes(paths=0)
    with pytest.raises(ValueError):
        V.Sizes(batch_sizes=(10, -1))
    assert V.with_sizes(SMALL, paths=7).paths == 7


def test_subseeds_are_distinct_and_stable():
    seeds = {V._subseed(1, t) for t in range(100)}
    assert len(seeds) == 100
    assert V._subseed(3, 4) == V._subseed(3, 4)


def test_zero_model_dpp_is_exact():
    model = LQModel.zero(2, 1)
    ric = solve_riccati(model, 50)
    x0 = V.gaussian_cloud(2, 30, 0)
    r = V.dpp_residual_check(model, ric, 0.0, 0.5, x0, SMALL, 1)
    assert r.statistic == 0.0 and r.stderr == 0.0 and r.passed


def test_dpp_interval_validation(scalar_model, scalar_ric):
    with pytest.raises(ValueError):
        V.dpp_residual_check(scalar_model, scalar_ric, 0.8, 0.5, np.zeros((5, 1)), SMALL)


@pytest.mark.parametrize("t, delta", [(0.0, 0.25), (0.5, 0.5)])
def test_dpp_scalar(scalar_model, scalar_ric, t, delta):
    x0 = V.gaussian_cloud(1, 300, 2)
    r = V.dpp_residual_check(scalar_model, scalar_ric, t, delta, x0, V.with_sizes(SMALL, paths=400), 3)
    assert r.passed, r.line()


def test_law_invariance_identical_clouds_is_exactly_zero(scalar_model, scalar_ric):
    x = V.gaussian_cloud(1, 100, 4)
    r = V.law_invariance_check(scalar_model, scalar_ric, x, x.copy(), SMALL, 5)
    assert r.statistic == 0.0 and r.passed
    assert r.details["permutation_gap"] == 0.0


def test_law_invariance_same_law(scalar_model, scalar_ric):
    # z-scores over 60 such pairs have unit spread; this pair sits near the centre
    a, b = V.gaussian_cloud(1, 500, 8), V.gaussian_cloud(1, 500, 9)
    assert V.law_invariance_check(scalar_model, scalar_ric, a, b, SMALL, 8).passed


def test_law_invariance_detects_a_different_law(scalar_model, scalar_ric):
    a, b = V.gaussian_cloud(1, 500, 6), V.gaussian_cloud(1, 500, 7, loc=2.0)
    assert not V.law_invariance_check(scalar_model, scalar_ric, a, b, SMALL, 8).passed


def test_zero_perturbation_leaves_costs_bit_identical(scalar_model, scalar_ric):
    qv = QuadraticValue(scalar_ric)
    x0 = V.gaussian_cloud(1, 50, 0)
    path = generate_common_path(0, 1, 40, 1, n_paths=20)
    K = random_perturbation(np.random.default_rng(0), 1, 1)
    a = stream_lq_costs(scalar_model, FeedbackPolicy(qv), x0, path).costs
    b = stream_lq_costs(scalar_model, FeedbackPolicy(qv, K.scaled(0.0)), x0, path).costs
    assert np.array_equal(a, b)


def test_quadratic_fit_recovers_a_parabola():
    eps = np.array([-0.2, -0.1, 0.1, 0.2])
    a, b = V._fit_quadratic(eps, 3 * eps**2 - 0.5 * eps)
    assert a == pytest.approx(3) and b == pytest.approx(-0.5)


def test_gap_on_the_scalar_model(scalar_model, scalar_ric):
    r = V.optimality_gap_check(scalar_model, scalar_ric, None, None, SMALL, 9)
    assert r.passed, (r.line(), r.details)
    assert r.details["min_curvature"] > 0


def test_gap_flags_a_suboptimal_base(scalar_model):
    # the value of a different model gives a feedback that is not optimal here
    wrong = solve_riccati(scalar_model.replace(R=np.array([[10.0]])), 400)
    r = V.optimality_gap_check(scalar_model, wrong, None, None, SMALL, 9)
    assert not r.passed


def test_comparison_identical_pair_and_shift():
    path = generate_common_path(0, 1, 10, 0, n_paths=300)
    W = path.brownian()
    g = Driver.from_g(lambda z: 0.5 * z + 0.2 * np.sin(z), 0.7)
    chi = np.sin(W[:, -1])
    a = solve_bsde_lsmc(g, chi, W, path.grid, path.increments)
    b = solve_bsde_lsmc(g, chi.copy(), W, path.grid, path.increments)
    assert a.y0 == b.y0
    z = Driver.zero()
    c = solve_bsde_lsmc(z, chi + 1.0, W, path.grid, path.increments)
    d = solve_bsde_lsmc(z, chi, W, path.grid, path.increments)
    assert c.y0 - d.y0 == pytest.approx(1.0, abs=1e-12)


def test_comparison_suite_small():
    r = V.comparison_check(SMALL, 1)
    assert r.statistic == 0 and r.passed
    assert r.sizes["trials"] == SMALL.trials


def test_determinism_small(scalar_model, scalar_ric):
    r = V.determinism_check(scalar_model, scalar_ric, V.with_sizes(SMALL, batches=30), 2)
    assert len(r.details["sds"]) == 3
    assert r.details["sds"][0] > r.details["sds"][-1]
    assert r.passed, r.details


def test_translation_gap_is_the_squared_shift():
    x = V.gaussian_cloud(2, 20, 0)
    shift = np.array([0.3, -0.4])
    X1 = np.stack([x, 2 * x])
    assert V._w2sq_paths(X1, X1 + shift) == pytest.approx(0.25, rel=1e-12)


def test_stability_suite(scalar_model, scalar_ric):
    reps = V.stability_checks(scalar_model, scalar_ric, SMALL, 3)
    assert [r.name for r in reps] == ["stability_forward", "stability_backward", "stability_time"]
    for r in reps[:2]:
        assert r.details["zero_gap"] == 0.0
        outs = [o for _, _, o in r.details["rows"]]
        assert outs == sorted(outs, reverse=True)
    assert all(r.passed for r in reps), [r.line() for r in reps]


def test_pointwise_checks_on_a_pool_model(pool):
    model = pool[4]
    ric = solve_riccati(model, 1000)
    clouds = [V.gaussian_cloud(model.n, 30, i) for i in range(2)]
    assert V.hjb_check(model, ric, [0.0, 0.5], clouds).passed
    assert V.stationarity_check(model, ric, [0.0, 0.5], clouds).passed
    assert V.rk4_order_check(model).passed


def test_run_all_is_reproducible(scalar_model):
    sel = ("hjb", "value_cost", "law")
    a = V.run_all(scalar_model, SMALL, 11, select=sel)
    b = V.run_all(scalar_model, SMALL, 11, select=sel)
    assert [r.line() for r in a] == [r.line() for r in b]
    assert [r.statistic for r in a] == [r.statistic for r in b]
    c = V.run_all(scalar_model, SMALL, 12, select=sel)
    assert a[1].statistic != c[1].statistic


def test_run_all_rejects_unknown_checks(scalar_model):
    with pytest.raises(ValueError):
        V.run_all(scalar_model, SMALL, select=("hjb", "nope"))


def test_run_all_with_a_given_cloud(scalar_model):
    x = V.gaussian_cloud(1, 150, 0)
    reps = V.run_all(scalar_model, SMALL, 0, initial=EmpiricalMeasure(x), select=("value_cost", "law"))
    assert reps[0].sizes["N"] == 150 and all(r.passed for r in reps)


def test_report_export(tmp_path, scalar_model):
    reps = V.run_all(scalar_model, SMALL, 0, select=("hjb", "rk4"))
    V.write_reports_csv(reps, tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert list(rows[0]) == V.CSV_FIELDS
    assert [r["name"] for r in rows] == ["hjb_residual", "rk4_order"]
    assert rows[0]["passed"] == "1"
    text = V.summary_text(reps)
    assert text.endswith("2/2 checks passed\n") and text.startswith("[PASS] hjb_residual")


def test_gaussian_cloud_moments():
    x = V.gaussian_cloud(3, 20000, 0, loc=1.0, scale=2.0)
    assert np.allclose(x.mean(0), 1.0, atol=0.05) and np.allclose(x.std(0), 2.0, atol=0.05)
    assert wasserstein2(EmpiricalMeasure(x[:5]), EmpiricalMeasure(x[:5])) == 0.0
