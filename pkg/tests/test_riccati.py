import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvlq.model import AssumptionError, LQModel, random_model
from mvlq.riccati import RiccatiError, compiled_rhs, riccati_rhs, solve_riccati
from oracles import scalar_riccati


def test_terminal_data_is_exact(pool):
    for model in pool[:5]:
        sol = solve_riccati(model, 50)
        assert np.array_equal(sol.P1[-1], model.G)
        assert np.array_equal(sol.P2[-1], model.G + model.Gbar)
        assert np.all(sol.phi[-1] == 0.0) and sol.psi[-1] == 0.0


def test_classical_scalar_matches_closed_form():
    a, b, q, r, g, T = 0.4, 1.3, 2.0, 0.7, 0.5, 1.5
    model = LQModel.scalar(a=a, b=b, q=q, r=r, g=g, T=T)
    sol = solve_riccati(model, 2000)
    exact = scalar_riccati(sol.grid, a, b, q, r, g, T)
    assert np.max(np.abs(sol.P1[:, 0, 0] - exact)) < 1e-10
    # no mean-field data: both blocks solve the same equation
    assert np.max(np.abs(sol.P2 - sol.P1)) < 1e-12


def test_zero_model_gives_zero_solution():
    sol = solve_riccati(LQModel.zero(2, 1), 20)
    for arr in (sol.P1, sol.P2, sol.phi, sol.psi):
        assert not np.any(arr)


def test_linear_parts_vanish(pool):
    # zero terminal data and a homogeneous equation keep phi and psi at zero
    for model in pool[:5]:
        sol = solve_riccati(model, 100)
        assert not np.any(sol.phi) and not np.any(sol.psi)


def test_compiled_rhs_matches_numpy(pool):
    rng = np.random.default_rng(5)
    for model in pool:
        n = model.n
        L1, L2 = rng.normal(size=(2, n, n))
        P1, P2, phi = L1 @ L1.T, L2 @ L2.T, rng.normal(size=n)
        ref = riccati_rhs(model, P1, P2, phi)
        got = compiled_rhs(model, P1, P2, phi)
        for x, y in zip(ref, got):
            assert np.allclose(x, y, rtol=1e-12, atol=1e-12)


def test_solution_is_symmetric_and_psd(pool):
    for model in pool:
        sol = solve_riccati(model, 200)
        assert np.array_equal(sol.P1, np.swapaxes(sol.P1, 1, 2))
        assert np.array_equal(sol.P2, np.swapaxes(sol.P2, 1, 2))
        assert min(np.linalg.eigvalsh(sol.P1).min(), np.linalg.eigvalsh(sol.P2).min()) > -1e-10


def test_stored_derivative_is_the_rhs(pool):
    model = pool[3]
    sol = solve_riccati(model, 40)
    for j in (0, 17, 40):
        ref = riccati_rhs(model, sol.P1[j], sol.P2[j], sol.phi[j])
        assert np.allclose(sol.dP1[j], ref[0], atol=1e-12)
        assert np.allclose(sol.dP2[j], ref[1], atol=1e-12)


def test_interpolation_snaps_to_nodes_and_is_linear_between():
    sol = solve_riccati(LQModel.scalar(a=0.3, q=1.0), 10)
    assert np.array_equal(sol.state(0.3)[0], sol.P1[3])
    mid = sol.state(0.35)[0]
    assert np.allclose(mid, 0.5 * (sol.P1[3] + sol.P1[4]), rtol=1e-14)
    with pytest.raises(ValueError):
        sol.state(1.5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 2))
def test_step_refinement_converges(seed, n, k):
    model = random_model(np.random.default_rng(seed), n, k)
    coarse, fine = solve_riccati(model, 50), solve_riccati(model, 100)
    diff = np.max(np.abs(coarse.P1 - fine.P1[::2]))
    assert diff < 1e-5 * (1 + np.max(np.abs(fine.P1)))


def test_errors():
    with pytest.raises(ValueError):
        solve_riccati(LQModel.scalar(), 0)
    with pytest.raises(AssumptionError):
        LQModel.scalar(r=-1.0)
    unchecked = LQModel(A=[[0.0]], B=[[1.0]], Q=[[1.0]], R=[[-1.0]], G=[[1.0]], validate=False)
    with pytest.raises(AssumptionError):
        solve_riccati(unchecked, 10)


def test_blow_up_reports_the_time():
    # a stiff drift makes RK4 unstable at this step size
    with pytest.raises(RiccatiError) as info:
        solve_riccati(LQModel.scalar(a=2000.0, T=5.0), 100)
    assert 0.0 <= info.value.time < 5.0


def test_csv_export(tmp_path):
    sol = solve_riccati(random_model(np.random.default_rng(2), 2, 1), 4)
    sol.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "t,P1_11,P1_12,P1_21,P1_22,P2_11,P2_12,P2_21,P2_22,phi_1,phi_2,psi"
    assert len(lines) == 6
    last = [float(v) for v in lines[-1].split(",")]
    assert last[1:5] == list(sol.model.G.ravel())
