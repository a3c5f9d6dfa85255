"""Backward SDE solvers and recursive costs.

The g-expectation of a terminal value chi is Y_0 for
-dY = g(Z) dt - Z dW, Y_T = chi.  For g(z) = beta z it equals
E[chi exp(beta W_T - beta^2 T / 2)], which gives an independent oracle for
the least-squares Monte Carlo (LSMC) solver below.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lq import running_cost, terminal_cost
from .measures import EmpiricalMeasure, mean_quad
from .mkvsde import (CommonNoisePath, ParticleEnsemble, iterate_forward, iterate_lq_moments,
                     lq_coefficients)
from .model import LQModel

logger = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass(frozen=True)
class Driver:
    """Generator f(t, x, y, z) evaluated on all paths at once.

    ``x`` is the (P, F) feature array at the current node and ``y``, ``z``
    are (P,) arrays, so law-dependent drivers can use cross-path statistics.
    """

    func: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float = 1.0
    linear_beta: float | None = None

    def __call__(self, t, x, y, z) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.func(t, x, y, z), dtype=float), y.shape)

    @classmethod
    def zero(cls) -> "Driver":
        return cls(lambda t, x, y, z: np.zeros_like(y), lipschitz=0.0, linear_beta=0.0)

    @classmethod
    def linear(cls, beta: float) -> "Driver":
        beta = float(beta)
        return cls(lambda t, x, y, z: beta * z, lipschitz=abs(beta), linear_beta=beta)

    @classmethod
    def from_g(cls, g: Callable[[np.ndarray], np.ndarray], lipschitz: float) -> "Driver":
        """Driver depending on z only; g(0) = 0 is required."""
        g0 = float(np.asarray(g(np.zeros(1)))[0])
        if g0 != 0.0:
            raise ValueError(f"g(0) must vanish for a g-expectation, got {g0}")
        return cls(lambda t, x, y, z: g(z), lipschitz=float(lipschitz))


def g_expectation_girsanov(beta: float, terminal_samples, brownian_terminals, T: float):
    """Estimate E_g[chi] for g(z) = beta z by reweighting; returns (estimate, stderr)."""
    chi = np.asarray(terminal_samples, dtype=float).ravel()
    WT = np.asarray(brownian_terminals, dtype=float).ravel()
    if chi.size == 0:
        raise ValueError("empty sample")
    if chi.shape != WT.shape:
        raise ValueError("terminal values and Brownian terminals must be paired")
    if chi.size < 2:
        raise ValueError("need at least two samples for a standard error")
    v = chi * np.exp(beta * WT - 0.5 * beta**2 * T)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


# -- regression --------------------------------------------------------------

def poly2_basis(x: np.ndarray) -> np.ndarray:
    """Constant, linear and all degree-2 monomials of the (P, F) features."""
    P, F = x.shape
    cols = [np.ones(P)] + [x[:, i] for i in range(F)]
    cols += [x[:, i] * x[:, j] for i in range(F) for j in range(i, F)]
    return np.column_stack(cols)


def lq_basis(n: int) -> Callable[[np.ndarray], np.ndarray]:
    """Basis for features (mean, vech Cov): constant, Cov entries, mean, mean products.

    The quadratic value and its diffusion coefficient lie in this span.
    """
    def basis(x):
        m, cov = x[:, :n], x[:, n:]
        cols = [np.ones(x.shape[0])] + list(cov.T) + list(m.T)
        cols += [m[:, i] * m[:, j] for i in range(n) for j in range(i, n)]
        return np.column_stack(cols)
    return basis


def cloud_features(x: np.ndarray) -> np.ndarray:
    """Mean and upper-triangular covariance entries of clouds (..., N, n)."""
    n = x.shape[-1]
    m = x.mean(axis=-2)
    y = x - m[..., None, :]
    cov = np.einsum("...ni,...nj->...ij", y, y) / x.shape[-2]
    iu = np.triu_indices(n)
    return np.concatenate([m, cov[..., iu[0], iu[1]]], axis=-1)


class _Projector:
    """Least-squares projection onto the span of a basis, with ridge fallback."""

    def __init__(self, Bm: np.ndarray):
        mean = Bm.mean(axis=0)
        sd = Bm.std(axis=0)
        keep = sd > 1e-12 * np.maximum(1.0, np.abs(mean))
        Z = (Bm[:, keep] - mean[keep]) / sd[keep]
        self.X = np.column_stack([np.ones(Bm.shape[0]), Z])
        Q, R = np.linalg.qr(self.X)
        d = np.abs(np.diag(R))
        self.deficient = bool(d.min() <= 1e-10 * d.max())
        if self.deficient:
            X = self.X
            self._gram = X.T @ X + RIDGE * np.eye(X.shape[1])
        else:
            self.Q = Q

    @property
    def size(self) -> int:
        return self.X.shape[1]

    def __call__(self, y: np.ndarray) -> np.ndarray:
        if self.deficient:
            return self.X @ np.linalg.solve(self._gram, self.X.T @ y)
        return self.Q @ (self.Q.T @ y)


@dataclass(frozen=True, eq=False)
class BsdeSolution:
    """Regression estimates of (Y, Z) per path and node.

    ``pathwise`` is the unprojected estimator Y_T + sum_m f_m h on each path;
    its sample mean equals ``y0`` whenever the node-0 basis is the constant,
    and its spread gives ``y0_stderr``.
    """

    grid: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    y0: float
    y0_stderr: float
    pathwise: np.ndarray
    ridge_steps: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        P = self.Y.shape[0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "Y_mean", "Y_stderr", "Z_mean"])
            for m, t in enumerate(self.grid):
                if m == 0:
                    ym, se = self.y0, self.y0_stderr
                else:
                    ym, se = self.Y[:, m].mean(), self.Y[:, m].std(ddof=1) / np.sqrt(P)
                z = self.Z[:, m].mean() if m < self.Z.shape[1] else float("nan")
                w.writerow([format(float(v), ".17g") for v in (t, ym, se, z)])


def _induction(driver, Y, X, grid, h, dW, S, basis):
    P, M = dW.shape
    Ys = np.empty((P, M + 1))
    Zs = np.empty((P, M))
    Ys[:, M] = Y
    pathwise = Y.copy()
    ridge_steps = []
    for m in range(M - 1, -1, -1):
        proj = _Projector(basis(X[:, m]))
        if proj.deficient:
            ridge_steps.append(m)
            logger.info("rank-deficient regression at step %d; ridge %.0e applied", m, RIDGE)
        t = float(grid[m])
        # centring Y is a control variate for Z; subtracting a fitted E_m Y instead
        # would bias Z towards zero by about L/P through overfitting
        Z = proj((Y - Y.mean()) * dW[:, m] / h[m])
        f = driver(t, X[:, m], Y, Z)
        if S is not None:
            f = f + S[:, m]
        pathwise = pathwise + h[m] * f
        Y = proj(Y + h[m] * f)
        Ys[:, m] = Y
        Zs[:, m] = Z
    return Ys, Zs, pathwise, ridge_steps


def _batched_projector(Bm: np.ndarray):
    """Ridge projections for a stack of designs (R, P, L); returns y (R, P) -> fitted (R, P)."""
    mean = Bm.mean(axis=1, keepdims=True)
    sd = Bm.std(axis=1, keepdims=True)
    sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mean)), sd, np.inf)
    Xd = np.concatenate([np.ones(Bm.shape[:2] + (1,)), (Bm - mean) / sd], axis=2)
    G = np.swapaxes(Xd, 1, 2) @ Xd + RIDGE * np.eye(Xd.shape[2])

    def proj(y):
        coef = np.linalg.solve(G, np.einsum("rpl,rp->rl", Xd, y)[..., None])
        return (Xd @ coef)[..., 0]
    return proj


def _bootstrap_y0(driver, terminal, X, grid, h, dW, S, basis, idx) -> np.ndarray:
    """Y_0 of the induction rerun on each row of path indices ``idx`` (R, P), all at once."""
    R, P = idx.shape
    Y = terminal[idx]
    for m in range(dW.shape[1] - 1, -1, -1):
        Xm = X[idx, m]
        proj = _batched_projector(basis(Xm.reshape(R * P, -1)).reshape(R, P, -1))
        dw = dW[idx, m]
        Z = proj((Y - Y.mean(axis=1, keepdims=True)) * dw / h[m])
        f = np.stack([driver(float(grid[m]), Xm[r], Y[r], Z[r]) for r in range(R)])
        if S is not None:
            f = f + S[idx, m]
        Y = proj(Y + h[m] * f)
    return Y.mean(axis=1)


def solve_bsde_lsmc(driver: Driver, terminal, forward_features, grid, increments,
                    source=None, basis: Callable[[np.ndarray], np.ndarray] | None = None,
                    check_size: bool = True, bootstrap: int = 0, seed: int = 0) -> BsdeSolution:
    """Explicit backward induction with regression-based conditional expectations.

    Z_m = E_m[(Y_{m+1} - mean Y_{m+1}) dW_m] / h and Y_m = E_m[Y_{m+1} + h (f(t_m, x_m, Y_{m+1}, Z_m) + s_m)],
    where ``source`` s is an optional (P, M) array of per-path running terms.

    Parameters
    ----------
    terminal : (P,) array
    forward_features : (P, M+1, F) array (or (P, M+1) for a single feature)
    grid : (M+1,) uniform time grid
    increments : (P, M) Brownian increments of the same paths
    basis : maps (P, F) features to a (P, L) design matrix; default ``poly2_basis``
    bootstrap : if positive, ``y0_stderr`` is the spread of Y_0 over this many
        path resamples, each rerunning the induction.  The default stderr from
        the pathwise sums treats the regression coefficients as known and runs
        low when Z carries much of the value.
    """
    Y = np.asarray(terminal, dtype=float).copy()
    X = np.asarray(forward_features, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    dW = np.asarray(increments, dtype=float)
    grid = np.asarray(grid, dtype=float)
    P, M = dW.shape
    if Y.shape != (P,) or X.shape[:2] != (P, M + 1) or grid.shape != (M + 1,):
        raise ValueError("terminal, features, increments and grid have inconsistent shapes")
    if not np.all(np.isfinite(X)):
        raise ValueError("forward features contain non-finite entries")
    S = None if source is None else np.asarray(source, dtype=float)
    if S is not None and S.shape != (P, M):
        raise ValueError(f"source must have shape {(P, M)}, got {S.shape}")
    basis = basis or poly2_basis
    h = np.diff(grid)
    if check_size:
        L = basis(X[:, -1]).shape[1]
        if P < 10 * L:
            raise ValueError(f"{P} paths is fewer than 10x the basis size {L}")

    Ys, Zs, pathwise, ridge_steps = _induction(driver, Y, X, grid, h, dW, S, basis)
    y0 = float(Ys[:, 0].mean())
    se = float(pathwise.std(ddof=1) / np.sqrt(P)) if P > 1 else float("nan")
    if bootstrap > 0:
        idx = np.random.default_rng(seed).integers(0, P, (bootstrap, P))
        ys = _bootstrap_y0(driver, Ys[:, M], X, grid, h, dW, S, basis, idx)
        se = float(np.std(ys, ddof=1))
    return BsdeSolution(grid, Ys, Zs, y0, se, pathwise, ridge_steps)


def backward_semigroup(driver: Driver, eta, forward_features, subgrid, increments,
                       source=None, basis=None, bootstrap: int = 0, seed: int = 0):
    """G_{t, t+delta}[eta]: the backward induction restricted to ``subgrid``.

    Returns (value at t, standard error).
    """
    sol = solve_bsde_lsmc(driver, eta, forward_features, subgrid, increments, source, basis,
                          bootstrap=bootstrap, seed=seed)
    return sol.y0, sol.y0_stderr


# -- LQ recursive cost --------------------------------------------------------

def girsanov_weights(beta: float, path: CommonNoisePath) -> np.ndarray:
    """exp(beta W_s - beta^2 (s - t0) / 2) on the grid; shape (P, M+1)."""
    W = path.brownian()
    if W.ndim == 1:
        W = W[None, :]
    s = path.grid - path.grid[0]
    return np.exp(beta * W - 0.5 * beta**2 * s)


def lq_pathwise_costs(model: LQModel, ens: ParticleEnsemble, beta: float | None = None,
                      halve: bool = True) -> np.ndarray:
    """Weighted cost of each common-noise path of a stored ensemble."""
    if ens.controls is None:
        raise ValueError("ensemble carries no control record")
    beta = model.beta if beta is None else beta
    X = ens.states if ens.path.batched else ens.states[None]
    U = ens.controls if ens.path.batched else ens.controls[None]
    if X.shape[2] != ens.path.steps + 1:
        raise ValueError("ensemble states do not match the path grid")
    w = girsanov_weights(beta, ens.path)
    h = ens.path.h
    # (P, N, M+1, n) -> (P, M+1, N, n) view for cloud statistics per node
    Xt = np.moveaxis(X, 2, 1)
    Ut = np.moveaxis(U, 2, 1)
    run = running_cost(model, Xt[:, :-1], Ut)
    term = terminal_cost(model, Xt[:, -1])
    cost = w[:, -1] * term + h * np.sum(w[:, :-1] * run, axis=1)
    return 0.5 * cost if halve else cost


def _summarize(costs: np.ndarray):
    return float(costs.mean()), float(costs.std(ddof=1) / np.sqrt(costs.size))


def lq_cost_estimate(model: LQModel, ensembles, beta: float | None = None, halve: bool = True):
    """Recursive cost J_g from ensembles simulated under the control being costed.

    ``ensembles`` is one ParticleEnsemble (a single path or a batch) or an
    iterable of them.  Returns (estimate, stderr across paths).  ``halve``
    applies the 1/2 in front of the quadratic cost; with ``halve=False`` the
    result is on the scale of the closed-form value function.
    """
    if isinstance(ensembles, ParticleEnsemble):
        ensembles = [ensembles]
    costs = np.concatenate([lq_pathwise_costs(model, e, beta, halve) for e in ensembles])
    if costs.size < 2:
        raise ValueError("need at least two common-noise paths for a standard error")
    return _summarize(costs)


@dataclass
class ClosedLoopRecord:
    """Per-path summaries gathered while streaming a simulation."""

    costs: np.ndarray
    features: np.ndarray | None = None
    running: np.ndarray | None = None
    final: np.ndarray | None = None


def stream_lq_costs(model: LQModel, policy, initial, path: CommonNoisePath, beta: float | None = None,
                    halve: bool = True, record: bool = False) -> ClosedLoopRecord:
    """Per-path costs without storing trajectories.

    Linear semi-feedback policies (anything with a ``gains(t)`` method) started
    from one shared cloud use the moment stepper; anything else runs the
    generic particle loop.
    With ``record=True`` also keeps cloud features (P, M+1, F), the unweighted
    running cost (P, M) and the final clouds (P, N, n).
    """
    beta = model.beta if beta is None else beta
    w = girsanov_weights(beta, path)
    h = path.h
    cost = np.zeros(path.n_paths)
    feats, runs, final = [], [], None
    x0 = initial.samples if isinstance(initial, EmpiricalMeasure) else np.asarray(initial, dtype=float)
    if hasattr(policy, "gains") and x0.ndim <= 2:
        iu = np.triu_indices(model.n)
        QQ, GG = model.Q + model.Qbar, model.G + model.Gbar
        for st in iterate_lq_moments(model, policy, x0, path):
            m, S = st.mean, st.cov
            if record:
                feats.append(np.concatenate([m, S[:, iu[0], iu[1]]], axis=-1))
            if st.gains is None:
                cost += w[:, st.m] * (_trace(model.G, S) + mean_quad(m, GG))
                final = st.cloud() if record else None
                break
            fb = st.gains
            ubar = m @ fb.K_mean.T + fb.c
            r = (_trace(model.Q + fb.K_dev.T @ model.R @ fb.K_dev, S)
                 + mean_quad(m, QQ) + mean_quad(ubar, model.R))
            cost += h * w[:, st.m] * r
            if record:
                runs.append(r)
    else:
        for m, _, x, u in iterate_forward(lq_coefficients(model), initial, policy, path):
            if record:
                feats.append(cloud_features(x))
            if u is None:
                cost += w[:, m] * terminal_cost(model, x)
                final = x
            else:
                r = running_cost(model, x, u)
                cost += h * w[:, m] * r
                if record:
                    runs.append(r)
    cost = 0.5 * cost if halve else cost
    if not record:
        return ClosedLoopRecord(cost)
    return ClosedLoopRecord(cost, np.stack(feats, axis=1), np.stack(runs, axis=1), final)


def _trace(K: np.ndarray, S: np.ndarray) -> np.ndarray:
    """tr(K S) for a batch of covariances S (P, n, n)."""
    return np.einsum("ij,pji->p", K, S)


def lq_cost_streamed(model: LQModel, policy, initial, path: CommonNoisePath, beta: float | None = None,
                     halve: bool = True):
    """Same estimate as ``lq_cost_estimate`` without keeping trajectories."""
    return _summarize(stream_lq_costs(model, policy, initial, path, beta, halve).costs)


def lq_driver(beta: float) -> Driver:
    """g-part of the LQ generator; the running cost enters as a source term."""
    return Driver.linear(beta)
