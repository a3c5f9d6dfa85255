"""Interacting-particle simulation of controlled McKean-Vlasov SDEs under common noise.

All particles share one Brownian path; the only idiosyncratic randomness is
in the initial draws, so the empirical cloud at each step stands in for the
conditional law given the common noise.  Batches of independent common-noise
paths are simulated together along a leading axis.

Array conventions: a cloud is ``(..., N, n)``; a batch of P paths carries
states ``(P, N, n)`` per step.  Drift, diffusion and policy callables receive
the whole cloud so that they can evaluate law-dependent terms along axis -2.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .lq import FeedbackPolicy, LinearFeedback, QuadraticValue
from .measures import EmpiricalMeasure
from .model import LQModel
from .riccati import RiccatiSolution


class SimulationError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"non-finite particle state at step {step}")
        self.step = step


@dataclass(frozen=True, eq=False)
class CommonNoisePath:
    """Uniform grid on [t0, T] and Brownian increments, shape (M,) or (P, M).

    ``step`` pins the step size so that sub-paths reuse exactly the same h.
    """

    grid: np.ndarray
    increments: np.ndarray
    seed: int | None = None
    step: float | None = None

    def __post_init__(self):
        if self.increments.shape[-1] != len(self.grid) - 1:
            raise ValueError("increments do not match the grid")
        if not np.all(np.isfinite(self.increments)):
            raise ValueError("increments contain non-finite entries")
        self.grid.setflags(write=False)
        self.increments.setflags(write=False)

    @property
    def steps(self) -> int:
        return len(self.grid) - 1

    @property
    def h(self) -> float:
        if self.step is not None:
            return float(self.step)
        return float(self.grid[-1] - self.grid[0]) / self.steps

    @property
    def batched(self) -> bool:
        return self.increments.ndim == 2

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0] if self.batched else 1

    def brownian(self) -> np.ndarray:
        """W at the grid nodes relative to W(t0) = 0."""
        W = np.cumsum(self.increments, axis=-1)
        return np.concatenate([np.zeros(W.shape[:-1] + (1,)), W], axis=-1)

    def tail(self, start: int) -> "CommonNoisePath":
        """The same path restricted to the grid from node ``start`` on."""
        return CommonNoisePath(self.grid[start:].copy(), self.increments[..., start:].copy(), self.seed,
                               self.h)

    def head(self, stop: int) -> "CommonNoisePath":
        return CommonNoisePath(self.grid[: stop + 1].copy(), self.increments[..., :stop].copy(), self.seed,
                               self.h)

    def select(self, idx) -> "CommonNoisePath":
        if not self.batched:
            raise ValueError("not a batch of paths")
        return CommonNoisePath(self.grid, self.increments[idx].copy(), self.seed, self.step)

    def to_csv(self, path, path_index: int = 0) -> None:
        dW = self.increments[path_index] if self.batched else self.increments
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "dW"])
            for t, d in zip(self.grid[:-1], dW):
                w.writerow([format(t, ".17g"), format(d, ".17g")])


def generate_common_path(t0: float, T: float, M: int, seed: int, n_paths: int | None = None) -> CommonNoisePath:
    """Gaussian increments N(0, h); the same seed gives the same path(s)."""
    if int(M) < 1:
        raise ValueError(f"need at least one step, got M = {M}")
    if not T > t0:
        raise ValueError(f"need T > t0, got [{t0}, {T}]")
    M = int(M)
    grid = np.linspace(t0, T, M + 1)
    h = (T - t0) / M
    rng = np.random.default_rng(seed)
    shape = (M,) if n_paths is None else (int(n_paths), M)
    return CommonNoisePath(grid, rng.normal(scale=np.sqrt(h), size=shape), seed, h)


@dataclass(frozen=True)
class CoefficientSet:
    """drift(t, x, u) and diffusion(t, x, u), each returning an array shaped like x."""

    drift: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    lipschitz_drift: float = 1.0
    lipschitz_diffusion: float = 1.0

    def __post_init__(self):
        for c in (self.lipschitz_drift, self.lipschitz_diffusion):
            if not (0 < c < np.inf):
                raise ValueError("declared Lipschitz constants must be positive and finite")


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Particle trajectories: states (N, M+1, n), or (P, N, M+1, n) for a path batch.

    ``controls`` holds the control applied on each step, (..., N, M, k).
    """

    states: np.ndarray
    path: CommonNoisePath
    policy: object = None
    controls: np.ndarray | None = None

    @property
    def grid(self) -> np.ndarray:
        return self.path.grid

    @property
    def n_particles(self) -> int:
        return self.states.shape[-3]

    def cloud(self, m: int) -> np.ndarray:
        """States at step m, shape (..., N, n)."""
        return self.states[..., m, :]

    def to_csv(self, path, path_index: int = 0) -> None:
        x = self.states[path_index] if self.path.batched else self.states
        N, _, n = x.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "particle_id"] + [f"x{j + 1}" for j in range(n)])
            for m, t in enumerate(self.grid):
                for i in range(N):
                    w.writerow([format(t, ".17g"), i] + [format(v, ".17g") for v in x[i, m]])


def _initial_cloud(initial, path: CommonNoisePath) -> np.ndarray:
    x0 = np.asarray(initial.samples if isinstance(initial, EmpiricalMeasure) else initial, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    if x0.ndim == 2:
        x0 = np.broadcast_to(x0, (path.n_paths,) + x0.shape)
    if x0.ndim != 3 or x0.shape[0] != path.n_paths:
        raise ValueError(f"initial samples of shape {x0.shape} do not match {path.n_paths} path(s)")
    if x0.shape[1] < 2:
        raise ValueError("mean-field coupling needs at least two particles")
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial samples contain non-finite entries")
    return np.array(x0)


def iterate_forward(coeffs: CoefficientSet, initial, policy, path: CommonNoisePath
                    ) -> Iterator[tuple[int, float, np.ndarray, np.ndarray | None]]:
    """Yield (m, t_m, X_m, u_m) for m = 0..M, with u_M = None; X has shape (P, N, n).

    Euler-Maruyama with the control and coefficients evaluated on the pre-step cloud.
    """
    x = _initial_cloud(initial, path)
    dW = path.increments if path.batched else path.increments[None, :]
    h = path.h
    M = path.steps
    for m in range(M):
        t = float(path.grid[m])
        u = policy(t, x) if policy is not None else None
        yield m, t, x, u
        x = x + coeffs.drift(t, x, u) * h + coeffs.diffusion(t, x, u) * dW[:, m, None, None]
        if not np.all(np.isfinite(x)):
            raise SimulationError(m + 1)
    yield M, float(path.grid[M]), x, None


def simulate_forward(coeffs: CoefficientSet, initial, policy, path: CommonNoisePath) -> ParticleEnsemble:
    """Simulate and store every step of the particle system."""
    states, controls = [], []
    for _, _, x, u in iterate_forward(coeffs, initial, policy, path):
        states.append(x)
        if u is not None:
            controls.append(u)
    X = np.stack(states, axis=-2)
    U = np.stack(controls, axis=-2) if controls else None
    if not path.batched:
        X = X[0]
        U = None if U is None else U[0]
    return ParticleEnsemble(X, path, policy, U)


def lq_coefficients(model: LQModel) -> CoefficientSet:
    A, Abar, B, C, Cbar, D = model.A, model.Abar, model.B, model.C, model.Cbar, model.D

    def drift(t, x, u):
        m = x.mean(axis=-2, keepdims=True)
        return x @ A.T + m @ Abar.T + u @ B.T

    def diffusion(t, x, u):
        m = x.mean(axis=-2, keepdims=True)
        return x @ C.T + m @ Cbar.T + u @ D.T

    op = lambda *Ms: max(1e-12, sum(np.linalg.norm(M_, 2) for M_ in Ms))  # noqa: E731
    return CoefficientSet(drift, diffusion, op(A, Abar, B), op(C, Cbar, D))


def closed_loop_policy(ric: RiccatiSolution, perturbation: LinearFeedback | None = None) -> FeedbackPolicy:
    return FeedbackPolicy(QuadraticValue(ric), perturbation)


def simulate_lq_closed_loop(model: LQModel, ric: RiccatiSolution, initial, path: CommonNoisePath,
                            policy=None) -> ParticleEnsemble:
    """Particles under the optimal semi-feedback (or ``policy`` if given)."""
    if path.grid[0] < -1e-12 or path.grid[-1] > ric.T + 1e-12:
        raise ValueError("path grid must lie inside the Riccati horizon")
    return simulate_forward(lq_coefficients(model), initial,
                            policy if policy is not None else closed_loop_policy(ric), path)


def conditional_mean_path(model: LQModel, ric: RiccatiSolution, xbar0, path: CommonNoisePath,
                          policy: FeedbackPolicy | None = None) -> np.ndarray:
    """Euler-Maruyama for the mean dynamics on the same path, (M+1, n) or (P, M+1, n).

    The mean control is K_mean(t) xbar + c(t).
    """
    policy = policy if policy is not None else closed_loop_policy(ric)
    As = model.A + model.Abar
    Cs = model.C + model.Cbar
    m = np.broadcast_to(np.asarray(xbar0, dtype=float).reshape(-1), (path.n_paths, model.n)).copy()
    dW = path.increments if path.batched else path.increments[None, :]
    out = [m]
    h = path.h
    for j in range(path.steps):
        fb = policy.gains(float(path.grid[j]))
        ubar = m @ fb.K_mean.T + fb.c
        m = m + (m @ As.T + ubar @ model.B.T) * h + (m @ Cs.T + ubar @ model.D.T) * dW[:, j, None]
        if not np.all(np.isfinite(m)):
            raise SimulationError(j + 1)
        out.append(m)
    res = np.stack(out, axis=1)
    return res if path.batched else res[0]


def empirical_flow(ens: ParticleEnsemble, m: int, path_index: int = 0) -> EmpiricalMeasure:
    """The particle cloud at step m as a measure."""
    M = ens.path.steps
    if not 0 <= m <= M:
        raise IndexError(f"step {m} outside 0..{M}")
    x = ens.states[path_index] if ens.path.batched else ens.states
    return EmpiricalMeasure(x[:, m, :])


@dataclass(frozen=True)
class MomentStep:
    """Cloud summary at one node of a linear closed-loop run.

    ``mean`` (P, n), ``cov`` (P, n, n) with 1/N normalization, ``gains`` the
    feedback applied on the following step (None at the last node).  The
    deviations from the mean are ``transfer @ dev0`` with ``transfer``
    (P, n, n) the product of the one-step maps and ``dev0`` (n, N) the
    initial deviations, so particles are only formed on request.
    """

    m: int
    t: float
    mean: np.ndarray
    cov: np.ndarray
    transfer: np.ndarray
    dev0: np.ndarray
    gains: LinearFeedback | None

    def cloud(self) -> np.ndarray:
        """Particle states (P, N, n)."""
        return np.swapaxes(self.transfer @ self.dev0, 1, 2) + self.mean[:, None, :]


def iterate_lq_moments(model: LQModel, policy: FeedbackPolicy, initial, path: CommonNoisePath):
    """Euler-Maruyama for the LQ particle system under a linear semi-feedback.

    Same recursion as ``simulate_forward`` with ``lq_coefficients``, regrouped:
    with y = x - mean, each step maps y -> y Mdev^T and mean -> mean Mmean^T + offset,
    where Mdev = I + h (A + B K_dev) + dW (C + D K_dev) and
    Mmean = I + h (As + B K_mean) + dW (Cs + D K_mean).  The covariance then
    follows Mdev cov Mdev^T, so the cost of a step does not grow with N.
    The initial cloud must be shared by all paths.
    """
    x0 = _initial_cloud(initial, path)
    if path.n_paths > 1 and not np.array_equal(x0[0], x0[-1]):
        raise ValueError("the moment stepper needs one initial cloud shared by all paths")
    P, N, n = x0.shape
    dev0 = (x0[0] - x0[0].mean(axis=0)).T
    mean = np.repeat(x0[0].mean(axis=0)[None, :], P, axis=0)
    cov = np.repeat((dev0 @ dev0.T / N)[None], P, axis=0)
    transfer = np.repeat(np.eye(n)[None], P, axis=0)
    dW = (path.increments if path.batched else path.increments[None, :])[:, :, None, None]
    h = path.h
    I = np.eye(n)
    A, B, C, D = model.A, model.B, model.C, model.D
    As, Cs = A + model.Abar, C + model.Cbar
    for j in range(path.steps + 1):
        t = float(path.grid[j])
        if j == path.steps:
            yield MomentStep(j, t, mean, cov, transfer, dev0, None)
            return
        fb = policy.gains(t)
        yield MomentStep(j, t, mean, cov, transfer, dev0, fb)
        Mdev = I + h * (A + B @ fb.K_dev) + dW[:, j] * (C + D @ fb.K_dev)
        Mmean = I + h * (As + B @ fb.K_mean) + dW[:, j] * (Cs + D @ fb.K_mean)
        off = h * (B @ fb.c) + dW[:, j, :, 0] * (D @ fb.c)
        transfer = Mdev @ transfer
        cov = Mdev @ cov @ np.swapaxes(Mdev, 1, 2)
        mean = np.einsum("pij,pj->pi", Mmean, mean) + off
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise SimulationError(j + 1)
