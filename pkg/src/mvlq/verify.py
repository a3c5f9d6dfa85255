"""Statistical checks that turn the theory's claims into pass/fail reports.

Every check is seeded: the same (seed, sizes) always yields the same report.
Paired comparisons share common-noise paths (common random numbers).
Statistical thresholds are three standard errors; where a discretization
allowance is added it is stated in the report details.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np

from .bsde import (Driver, lq_basis, lq_cost_estimate, poly2_basis, solve_bsde_lsmc,
                   stream_lq_costs)
from .lq import (FeedbackPolicy, LinearFeedback, QuadraticValue, hjb_residual, optimal_feedback,
                 psi_from_pi, random_perturbation, terminal_cost, value_from_state,
                 value_function)
from .measures import EmpiricalMeasure, second_moment_distance, wasserstein2
from .mkvsde import generate_common_path, simulate_lq_closed_loop
from .model import LQModel
from .riccati import RiccatiSolution, solve_riccati


@dataclass(frozen=True)
class Sizes:
    """Sample sizes for the checks; defaults are the desk-scale settings."""

    particles: int = 2000
    paths: int = 200
    steps: int = 200
    riccati_steps: int = 2000
    gap_paths: int = 1000
    perturbations: int = 10
    eps_levels: tuple[float, ...] = (0.05, 0.1, 0.2)
    trials: int = 100
    comparison_paths: int = 1000
    comparison_steps: int = 20
    batches: int = 40
    batch_sizes: tuple[int, ...] = (200, 1600, 12800)
    det_particles: int = 20
    det_steps: int = 20
    stab_particles: int = 128
    stab_paths: int = 50
    stab_steps: int = 50
    bootstrap: int = 200

    def __post_init__(self):
        for k, v in asdict(self).items():
            vals = v if isinstance(v, tuple) else (v,)
            if not vals or any(x <= 0 for x in vals):
                raise ValueError(f"size {k} must be positive, got {v}")


@dataclass
class CheckReport:
    """Outcome of one check.  ``passed`` is |statistic| <= tolerance unless
    the check declares a one-sided or compound rule in ``details``."""

    name: str
    statistic: float
    tolerance: float
    stderr: float
    passed: bool
    seed: int
    sizes: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        se = "" if not np.isfinite(self.stderr) else f" stderr={self.stderr:.3g}"
        return f"[{flag}] {self.name}: statistic={self.statistic:.6g} tolerance={self.tolerance:.6g}{se}"


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


def gaussian_cloud(n: int, N: int, seed: int, loc=0.5, scale=1.0) -> np.ndarray:
    """N draws of N(loc, scale^2 I) in R^n."""
    rng = np.random.default_rng(seed)
    return loc + scale * rng.standard_normal((N, n))


def _as_array(initial) -> np.ndarray:
    x = initial.samples if isinstance(initial, EmpiricalMeasure) else np.asarray(initial, dtype=float)
    return x[:, None] if x.ndim == 1 else x


# -- pointwise identities ----------------------------------------------------

def hjb_check(model: LQModel, ric: RiccatiSolution, times: Iterable[float], clouds, seed: int = 0,
              tol: float = 1e-6) -> CheckReport:
    """max |HJB residual| / (1 + |V|) over the (t, cloud) grid."""
    qv = QuadraticValue(ric)
    worst = 0.0
    times = list(times)
    for t in times:
        for x in clouds:
            mu = EmpiricalMeasure(x)
            r = hjb_residual(qv, t, mu)
            worst = max(worst, abs(r) / (1.0 + abs(value_function(qv, t, mu))))
    return CheckReport("hjb_residual", worst, tol, float("nan"), worst <= tol, seed,
                       {"times": len(times), "clouds": len(clouds)})


def fd_gradient(pis, x: np.ndarray, U: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of the control functional in each entry of U."""
    g = np.zeros_like(U)
    for idx in np.ndindex(*U.shape):
        e = np.zeros_like(U)
        e[idx] = step
        g[idx] = (psi_from_pi(pis, x, U + e) - psi_from_pi(pis, x, U - e)) / (2 * step)
    return g


def stationarity_check(model: LQModel, ric: RiccatiSolution, times: Iterable[float], clouds,
                       seed: int = 0, tol: float = 1e-6) -> CheckReport:
    """Finite-difference gradient of the control functional at u*.

    The gradient is taken per sample and multiplied by N (the derivative
    along a single atom), then compared to 1 + |functional value|.
    """
    qv = QuadraticValue(ric)
    worst = 0.0
    for t in times:
        pis = ric.pi(t)
        for x in clouds:
            U = optimal_feedback(qv, t)(x)
            g = fd_gradient(pis, x, U) * x.shape[0]
            worst = max(worst, float(np.max(np.abs(g))) / (1.0 + abs(psi_from_pi(pis, x, U))))
    return CheckReport("stationarity", worst, tol, float("nan"), worst <= tol, seed, {})


# -- Monte-Carlo checks ------------------------------------------------------

def value_cost_check(model: LQModel, ric: RiccatiSolution, initial, sizes: Sizes = Sizes(),
                     seed: int = 0) -> CheckReport:
    """Closed-loop cost of u* against V(0, mu); tolerance max(3 stderr, 2% |V|)."""
    x0 = _as_array(initial)
    qv = QuadraticValue(ric)
    path = generate_common_path(0.0, model.T, sizes.steps, seed, n_paths=sizes.paths)
    costs = stream_lq_costs(model, FeedbackPolicy(qv), x0, path, halve=False).costs
    J, se = float(costs.mean()), float(costs.std(ddof=1) / np.sqrt(costs.size))
    V = value_function(qv, 0.0, EmpiricalMeasure(x0))
    tol = max(3 * se, 0.02 * abs(V))
    return CheckReport("value_cost", J - V, tol, se, abs(J - V) <= tol, seed,
                       {"N": x0.shape[0], "paths": sizes.paths, "steps": sizes.steps},
                       {"J": J, "V": V})


def lq_semigroup(model: LQModel, ric: RiccatiSolution, t: float, delta: float, initial, path_seed: int,
                 paths: int, steps: int, bootstrap: int = 0):
    """Backward semigroup over [t, t + delta] applied to V(t + delta, rho).

    The closed loop is simulated from ``initial`` at time t; the running cost
    enters as a source and the g-part as the linear driver beta z.
    Returns (Y_t, stderr, the BsdeSolution); ``bootstrap`` > 0 selects the
    resampling stderr.
    """
    qv = QuadraticValue(ric)
    path = generate_common_path(t, t + delta, steps, path_seed, n_paths=paths)
    rec = stream_lq_costs(model, FeedbackPolicy(qv), _as_array(initial), path, halve=False, record=True)
    eta = value_from_state(*ric.state(t + delta), rec.final)
    sol = solve_bsde_lsmc(Driver.linear(model.beta), eta, rec.features, path.grid, path.increments,
                          source=rec.running, basis=lq_basis(model.n), bootstrap=bootstrap,
                          seed=_subseed(path_seed, 77))
    return sol.y0, sol.y0_stderr, sol


def dpp_residual_check(model: LQModel, ric: RiccatiSolution, t: float, delta: float, initial,
                       sizes: Sizes = Sizes(), seed: int = 0) -> CheckReport:
    """G_{t,t+delta}[V(t+delta, rho)] - V(t, mu), within three bootstrap standard errors."""
    if not (0.0 <= t < t + delta <= model.T + 1e-12):
        raise ValueError(f"invalid interval [{t}, {t + delta}] for horizon {model.T}")
    steps = max(1, int(round(sizes.steps * delta / model.T)))
    x0 = _as_array(initial)
    y, se, sol = lq_semigroup(model, ric, t, delta, x0, seed, sizes.paths, steps, sizes.bootstrap)
    V = value_function(QuadraticValue(ric), t, EmpiricalMeasure(x0))
    return CheckReport(f"dpp_residual(t={t:g},delta={delta:g})", y - V, 3 * se, se,
                       abs(y - V) <= 3 * se, seed,
                       {"N": x0.shape[0], "paths": sizes.paths, "steps": steps},
                       {"G": y, "V": V, "ridge_steps": len(sol.ridge_steps)})


def _bootstrap_value_sd(qv: QuadraticValue, x: np.ndarray, B: int, seed: int) -> float:
    """Spread of V(0, .) over clouds resampled from x: the initial-sampling noise."""
    rng = np.random.default_rng(seed)
    P1, P2, phi, psi = qv.riccati.state(0.0)
    idx = rng.integers(0, x.shape[0], size=(B, x.shape[0]))
    return float(np.std(value_from_state(P1, P2, phi, psi, x[idx]), ddof=1))


def law_invariance_check(model: LQModel, ric: RiccatiSolution, cloud1, cloud2, sizes: Sizes = Sizes(),
                         seed: int = 0) -> CheckReport:
    """Costs of u* from two same-law initial clouds on shared paths.

    The combined stderr adds the path noise of both runs and a bootstrap
    estimate of the initial-sampling noise of each cloud, since two finite
    draws of one law have slightly different values.  The report also
    requires V to be exactly invariant under permuting a cloud.
    """
    x1, x2 = _as_array(cloud1), _as_array(cloud2)
    if x1.shape[1] != x2.shape[1] or x1.shape[1] != model.n:
        raise ValueError("cloud dimensions do not match the model")
    qv = QuadraticValue(ric)
    path = generate_common_path(0.0, model.T, sizes.steps, seed, n_paths=sizes.paths)
    pol = FeedbackPolicy(qv)
    c1 = stream_lq_costs(model, pol, x1, path, halve=False).costs
    c2 = stream_lq_costs(model, pol, x2, path, halve=False).costs
    se1 = c1.std(ddof=1) / np.sqrt(c1.size)
    se2 = c2.std(ddof=1) / np.sqrt(c2.size)
    b1 = _bootstrap_value_sd(qv, x1, sizes.bootstrap, _subseed(seed, 1))
    b2 = _bootstrap_value_sd(qv, x2, sizes.bootstrap, _subseed(seed, 2))
    se = float(np.sqrt(se1**2 + se2**2 + b1**2 + b2**2))
    diff = float(c1.mean() - c2.mean())
    perm = np.random.default_rng(_subseed(seed, 3)).permutation(x1.shape[0])
    V = value_function(qv, 0.0, EmpiricalMeasure(x1))
    perm_gap = abs(value_function(qv, 0.0, EmpiricalMeasure(x1[perm])) - V)
    same_gap = abs(V - value_function(qv, 0.0, EmpiricalMeasure(x1.copy())))
    passed = abs(diff) <= 3 * se and perm_gap == 0.0 and same_gap == 0.0
    return CheckReport("law_invariance", diff, 3 * se, se, passed, seed,
                       {"N": x1.shape[0], "paths": sizes.paths, "steps": sizes.steps},
                       {"permutation_gap": perm_gap, "identical_gap": same_gap,
                        "path_stderr": float(np.hypot(se1, se2)), "init_sd": float(np.hypot(b1, b2))})


def _fit_quadratic(eps: np.ndarray, dJ: np.ndarray):
    """Least-squares dJ ~ a eps^2 + b eps (through the origin); dJ may be (L,) or (P, L)."""
    X = np.column_stack([eps**2, eps])
    coef = np.linalg.pinv(X) @ np.asarray(dJ, dtype=float).T
    return coef[0], coef[1]


def _vertex_stats(a_p: np.ndarray, b_p: np.ndarray):
    """Vertex -b / 2a of the path-averaged fit and its delta-method stderr."""
    a, b = float(a_p.mean()), float(b_p.mean())
    cov = np.cov(np.vstack([a_p, b_p])) / a_p.size
    grad = np.array([b / (2 * a * a), -1 / (2 * a)]) if a != 0 else np.array([np.inf, np.inf])
    se = float(np.sqrt(max(grad @ cov @ grad, 0.0))) if a > 0 else np.inf
    return a, b, (-b / (2 * a) if a > 0 else np.inf), se


VERTEX_TOL = 0.05


def optimality_gap_check(model: LQModel, ric: RiccatiSolution, perturbations: list[LinearFeedback] | None,
                         initial=None, sizes: Sizes = Sizes(), seed: int = 0,
                         max_doublings: int = 4) -> CheckReport:
    """Cost increments of u* + eps K over u* on shared paths.

    Each K is run at eps in +-eps_levels and dJ ~ a eps^2 + b eps is fitted.
    Passes when every increment is >= -3 stderr and each parabola has
    positive curvature and its vertex within 0.05 of zero.  The statistic
    is the largest |vertex|.

    The vertex is a ratio of noisy coefficients, and its noise is set by
    the pathwise first variation of the cost, which only vanishes on
    average.  Paths are therefore added in doublings (at most
    ``max_doublings``) until every vertex stderr is below a third of the
    tolerance.  The stopping rule looks only at stderrs, never at the
    vertices themselves.
    """
    qv = QuadraticValue(ric)
    if initial is None:
        initial = gaussian_cloud(model.n, sizes.particles, _subseed(seed, 10))
    x0 = _as_array(initial)
    if perturbations is None:
        rng = np.random.default_rng(_subseed(seed, 11))
        perturbations = [random_perturbation(rng, model.n, model.k) for _ in range(sizes.perturbations)]
    levels = np.array(sorted({s * e for e in sizes.eps_levels for s in (-1.0, 1.0)}))

    def increments(batch: int, paths: int) -> list[np.ndarray]:
        path = generate_common_path(0.0, model.T, sizes.steps, _subseed(seed, 500 + batch), n_paths=paths)
        base = stream_lq_costs(model, FeedbackPolicy(qv), x0, path).costs
        return [np.stack([stream_lq_costs(model, FeedbackPolicy(qv, K.scaled(e)), x0, path).costs - base
                          for e in levels], axis=1) for K in perturbations]

    d = increments(0, sizes.gap_paths)
    total = sizes.gap_paths
    for batch in range(1, max_doublings + 1):
        ses = [_vertex_stats(*_fit_quadratic(levels, dk))[3] for dk in d]
        if max(ses) <= VERTEX_TOL / 3:
            break
        more = increments(batch, total)
        d = [np.vstack([a, b]) for a, b in zip(d, more)]
        total *= 2

    worst_z, worst_vertex, min_curv = np.inf, 0.0, np.inf
    rows = []
    for dk in d:
        a, b, vertex, vse = _vertex_stats(*_fit_quadratic(levels, dk))
        dJ = dk.mean(axis=0)
        ses = dk.std(axis=0, ddof=1) / np.sqrt(dk.shape[0])
        worst_z = min(worst_z, float(np.min(dJ / np.maximum(ses, 1e-300))))
        worst_vertex = max(worst_vertex, abs(vertex))
        min_curv = min(min_curv, a)
        rows.append({"a": a, "b": b, "vertex": vertex, "vertex_stderr": vse, "min_dJ": float(dJ.min())})
    passed = worst_z >= -3.0 and min_curv > 0 and worst_vertex <= VERTEX_TOL
    return CheckReport("optimality_gap", worst_vertex, VERTEX_TOL, float("nan"), passed, seed,
                       {"N": x0.shape[0], "paths": total, "steps": sizes.steps,
                        "perturbations": len(perturbations), "eps": list(levels)},
                       {"min_z": worst_z, "min_curvature": min_curv, "fits": rows})


def comparison_check(sizes: Sizes = Sizes(), seed: int = 0) -> CheckReport:
    """Ordered pairs (zeta1 >= zeta2, g1 >= g2) solved on shared paths.

    g2(z) = a z + b sin z, g1 = g2 + c |z|; zeta2 = p0 + p1 W_T + p2 sin W_T and
    zeta1 = zeta2 + d (1 + cos W_T) with c, d >= 0.  A violation is
    Y1 - Y2 < -3 stderr of the pathwise difference.  Statistic: violations.
    """
    rng = np.random.default_rng(_subseed(seed, 20))
    T = 1.0
    violations, worst = 0, np.inf
    for trial in range(sizes.trials):
        a, b = rng.uniform(-1, 1, size=2)
        c, d = rng.uniform(0, 1, size=2)
        p = rng.normal(size=3)
        path = generate_common_path(0.0, T, sizes.comparison_steps, _subseed(seed, 1000 + trial),
                                    n_paths=sizes.comparison_paths)
        W = path.brownian()
        WT = W[:, -1]
        z2 = p[0] + p[1] * WT + p[2] * np.sin(WT)
        z1 = z2 + d * (1 + np.cos(WT))
        g2 = Driver.from_g(lambda z, a=a, b=b: a * z + b * np.sin(z), abs(a) + abs(b))
        g1 = Driver.from_g(lambda z, a=a, b=b, c=c: a * z + b * np.sin(z) + c * np.abs(z),
                           abs(a) + abs(b) + c)
        s1 = solve_bsde_lsmc(g1, z1, W, path.grid, path.increments, basis=poly2_basis)
        s2 = solve_bsde_lsmc(g2, z2, W, path.grid, path.increments, basis=poly2_basis)
        diff = s1.pathwise - s2.pathwise
        se = diff.std(ddof=1) / np.sqrt(diff.size)
        gap = s1.y0 - s2.y0
        z = gap / se if se > 0 else (0.0 if gap == 0 else np.sign(gap) * np.inf)
        worst = min(worst, float(z))
        violations += int(gap < -3 * se)
    return CheckReport("comparison", float(violations), 0.0, float("nan"), violations == 0, seed,
                       {"trials": sizes.trials, "paths": sizes.comparison_paths,
                        "steps": sizes.comparison_steps}, {"min_z": worst})


def determinism_check(model: LQModel, ric: RiccatiSolution, sizes: Sizes = Sizes(),
                      seed: int = 0) -> CheckReport:
    """Across-batch spread of the LSMC Y_0 against batch size.

    Y_0 is the backward semigroup over the whole horizon from a fixed cloud.
    If Y_0 is a constant blurred only by Monte-Carlo noise, its standard
    deviation over independent batches falls like batch^-1/2; the check fits
    the log-log slope and asks for [-0.6, -0.4].
    """
    x0 = gaussian_cloud(model.n, sizes.det_particles, _subseed(seed, 30))
    sds = []
    for j, B in enumerate(sizes.batch_sizes):
        ys = [lq_semigroup(model, ric, 0.0, model.T, x0, _subseed(seed, 10_000 * (j + 1) + i), B,
                           sizes.det_steps)[0] for i in range(sizes.batches)]
        sds.append(float(np.std(ys, ddof=1)))
    slope = float(np.polyfit(np.log(sizes.batch_sizes), np.log(sds), 1)[0])
    return CheckReport("determinism", slope + 0.5, 0.1, float("nan"), abs(slope + 0.5) <= 0.1, seed,
                       {"batches": sizes.batches, "batch_sizes": list(sizes.batch_sizes),
                        "N": sizes.det_particles, "steps": sizes.det_steps},
                       {"slope": slope, "sds": sds})


# -- stability ----------------------------------------------------------------

STAB_SCALES = (1.0, 0.5, 0.25, 0.125, 0.0)


def _pair_run(model, ric, x0, x0p, K: LinearFeedback, s: float, path):
    """Base run (x0, u*) and perturbed run (x0p, u* + s K) on the same paths."""
    qv = QuadraticValue(ric)
    e1 = simulate_lq_closed_loop(model, ric, x0, path, FeedbackPolicy(qv))
    e2 = simulate_lq_closed_loop(model, ric, x0p, path, FeedbackPolicy(qv, K.scaled(s)))
    return e1, e2


def _w2sq_paths(X1: np.ndarray, X2: np.ndarray) -> float:
    """Mean over paths of W2^2 between clouds (P, N, n)."""
    return float(np.mean([wasserstein2(EmpiricalMeasure(a), EmpiricalMeasure(b)) ** 2
                          for a, b in zip(X1, X2)]))


def stability_checks(model: LQModel, ric: RiccatiSolution, sizes: Sizes = Sizes(),
                     seed: int = 0, margin: float = 2.0, amplitude: float = 0.05) -> list[CheckReport]:
    """Three fitted-constant bounds.

    A family of perturbed inputs is indexed by s in STAB_SCALES: initial
    cloud xi + s (c + 0.3 Z) and control u* + s K.  The input gap is
    I(s) = W2^2(mu0, mu0') + Upsilon with Upsilon = E int |u - u'|^2.

    (a) forward: E W2^2(rho_T, rho_T') <= C I(s)
    (b) backward: sup_s E|Y_s - Y_s'|^2 <= C I(s), with the sup taken over
        the two ends s = 0 (the costs) and s = T (the terminal costs per path)
    (c) time regularity: |V(t, mu) - V(t + d, mu)| <= C (1 + W2(mu, delta_0)) d^1/2

    For (a) and (b), C is fitted on the s = 1 member (times ``margin``) and
    held fixed for the rest of the family; the gaps must shrink with s and
    vanish exactly at s = 0.  For (c), C is fitted on the base cloud over
    all (t, d) and held for shifted and rescaled clouds of comparable
    second moment.  The statistic is the largest ratio to the bound.
    """
    rng = np.random.default_rng(_subseed(seed, 40))
    n = model.n
    N, P = sizes.stab_particles, sizes.stab_paths
    x0 = gaussian_cloud(n, N, _subseed(seed, 41))
    shift = amplitude * rng.normal(size=n)
    noise = 0.3 * amplitude * rng.standard_normal((N, n))
    K = random_perturbation(rng, n, model.k, amplitude)
    path = generate_common_path(0.0, model.T, sizes.stab_steps, _subseed(seed, 42), n_paths=P)
    h = path.h
    fwd, bwd = [], []
    for s in STAB_SCALES:
        x0p = x0 + s * (shift + noise)
        e1, e2 = _pair_run(model, ric, x0, x0p, K, s, path)
        ups = float(h * np.sum(np.mean(np.sum((e1.controls - e2.controls) ** 2, axis=-1), axis=(0, 1))))
        inp = wasserstein2(EmpiricalMeasure(x0), EmpiricalMeasure(x0p)) ** 2 + ups
        out_f = _w2sq_paths(e1.states[:, :, -1], e2.states[:, :, -1])
        dY0 = lq_cost_estimate(model, e1, halve=False)[0] - lq_cost_estimate(model, e2, halve=False)[0]
        dYT = terminal_cost(model, e1.states[:, :, -1]) - terminal_cost(model, e2.states[:, :, -1])
        out_b = max(dY0**2, float(np.mean(dYT**2)))
        fwd.append((s, inp, out_f))
        bwd.append((s, inp, out_b))

    sizes_d = {"N": N, "paths": P, "steps": sizes.stab_steps}
    reports = []
    for name, rows in (("stability_forward", fwd), ("stability_backward", bwd)):
        _, inp1, out1 = rows[0]
        C = margin * out1 / inp1
        ratios = [out / (C * inp) for s, inp, out in rows if s > 0]
        zero_gap = rows[-1][2]
        outs = [out for _, _, out in rows]
        shrinking = all(outs[i + 1] <= outs[i] for i in range(len(outs) - 1))
        stat = max(ratios)
        reports.append(CheckReport(name, stat, 1.0, float("nan"),
                                   stat <= 1.0 and zero_gap == 0.0 and shrinking, seed, sizes_d,
                                   {"C_hat": C, "rows": rows, "zero_gap": zero_gap}))

    qv = QuadraticValue(ric)
    T = model.T
    deltas = [T / 32, T / 16, T / 8, T / 4]
    fresh = gaussian_cloud(n, N, _subseed(seed, 43))
    clouds = [x0, 0.5 * x0, 1.5 * x0, -x0, fresh, np.zeros_like(x0)]
    times = [0.0, 0.25 * T, 0.5 * T, 0.75 * T]
    table = []
    for ci, x in enumerate(clouds):
        mu = EmpiricalMeasure(x)
        w = second_moment_distance(mu)
        for t in times:
            for d in deltas:
                if t + d > T:
                    continue
                gap = abs(value_function(qv, t, mu) - value_function(qv, t + d, mu))
                table.append((ci, t, d, gap / ((1.0 + w) * np.sqrt(d))))
    C = margin * max(r for ci, t, d, r in table if ci == 0)
    stat = max(r for *_, r in table) / C
    zero = abs(value_function(qv, 0.0, EmpiricalMeasure(x0)) - value_function(qv, 0.0, EmpiricalMeasure(x0)))
    reports.append(CheckReport("stability_time", stat, 1.0, float("nan"), stat <= 1.0 and zero == 0.0,
                               seed, {"deltas": deltas, "clouds": len(clouds)},
                               {"C_hat": C, "table": table}))
    return reports


def rk4_order_check(model: LQModel, coarse: int = 8, seed: int = 0) -> CheckReport:
    """Observed order from the ratio of successive differences at the coarse nodes."""
    sols = [solve_riccati(model, coarse * 2**j) for j in range(3)]

    def nodes(sol, j):
        s = 2**j
        return np.concatenate([sol.P1[::s].ravel(), sol.P2[::s].ravel(),
                               sol.phi[::s].ravel(), sol.psi[::s]])

    y = [nodes(s, j) for j, s in enumerate(sols)]
    e1 = np.max(np.abs(y[0] - y[1]))
    e2 = np.max(np.abs(y[1] - y[2]))
    order = float(np.log2(e1 / e2)) if e2 > 0 else float("nan")
    return CheckReport("rk4_order", order - 4.0, 0.5, float("nan"), abs(order - 4.0) <= 0.5, seed,
                       {"steps": [s.steps for s in sols]}, {"order": order, "diffs": [e1, e2]})


# -- suite ---------------------------------------------------------------------

CHECKS = ("hjb", "stationarity", "rk4", "value_cost", "dpp", "law", "gap", "comparison",
          "determinism", "stability")


def default_initial(n: int, sizes: Sizes, seed: int, loc: float = 0.5, scale: float = 1.0) -> np.ndarray:
    """The initial cloud ``run_all`` uses when none is given."""
    return gaussian_cloud(n, sizes.particles, _subseed(seed, 1), loc, scale)


def run_all(model: LQModel, sizes: Sizes = Sizes(), seed: int = 0, initial=None,
            ric: RiccatiSolution | None = None, select: Iterable[str] = CHECKS,
            loc: float = 0.5, scale: float = 1.0) -> list[CheckReport]:
    """The suite on one model; ``select`` picks a subset of CHECKS.

    Without ``initial`` the cloud is drawn from N(loc, scale^2 I) and the
    law-invariance partner is a second draw of that law.  With a given
    cloud the partner is a resample of it with replacement.
    """
    select = set(select)
    unknown = select - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    ric = ric or solve_riccati(model, sizes.riccati_steps)
    n, T = model.n, model.T
    if initial is None:
        x0 = default_initial(n, sizes, seed, loc, scale)
        partner = gaussian_cloud(n, x0.shape[0], _subseed(seed, 5), loc, scale)
    else:
        x0 = _as_array(initial)
        idx = np.random.default_rng(_subseed(seed, 5)).integers(0, x0.shape[0], x0.shape[0])
        partner = x0[idx]
    small = [gaussian_cloud(n, 50, _subseed(seed, 100 + i), loc=0.5 * i, scale=0.5 + 0.5 * i)
             for i in range(5)]
    times = np.linspace(0.0, T, 11)[:-1]
    suite = {
        "hjb": lambda: [hjb_check(model, ric, times, small, seed)],
        "stationarity": lambda: [stationarity_check(model, ric, times[::3], small[:2], seed)],
        "rk4": lambda: [rk4_order_check(model, seed=seed)],
        "value_cost": lambda: [value_cost_check(model, ric, x0, sizes, _subseed(seed, 2))],
        "dpp": lambda: [dpp_residual_check(model, ric, 0.0, T / 10, x0, sizes, _subseed(seed, 3)),
                        dpp_residual_check(model, ric, 0.0, T / 4, x0, sizes, _subseed(seed, 4))],
        "law": lambda: [law_invariance_check(model, ric, x0, partner, sizes, _subseed(seed, 6))],
        "gap": lambda: [optimality_gap_check(model, ric, None, None, sizes, _subseed(seed, 7))],
        "comparison": lambda: [comparison_check(sizes, _subseed(seed, 8))],
        "determinism": lambda: [determinism_check(model, ric, sizes, _subseed(seed, 9))],
        "stability": lambda: stability_checks(model, ric, sizes, _subseed(seed, 12)),
    }
    reports = []
    for name in CHECKS:
        if name in select:
            reports += suite[name]()
    return reports


CSV_FIELDS = ["name", "statistic", "tolerance", "stderr", "passed", "seed", "sizes"]


def write_reports_csv(reports: list[CheckReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in reports:
            sz = ";".join(f"{k}={v}" for k, v in r.sizes.items())
            w.writerow([r.name, format(r.statistic, ".17g"), format(r.tolerance, ".17g"),
                        format(r.stderr, ".17g"), int(r.passed), r.seed, sz])


def summary_text(reports: list[CheckReport]) -> str:
    lines = [r.line() for r in reports]
    failed = sum(not r.passed for r in reports)
    lines.append(f"{len(reports) - failed}/{len(reports)} checks passed")
    return "\n".join(lines) + "\n"


def with_sizes(sizes: Sizes, **changes) -> Sizes:
    return replace(sizes, **changes)
