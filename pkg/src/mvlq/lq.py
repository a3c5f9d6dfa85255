"""Closed-form value function, optimal semi-feedback and HJB residual."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measures import EmpiricalMeasure, cloud_mean, cloud_quad, cloud_variance, mean_quad
from .model import LQModel
from .riccati import RiccatiSolution, drift_blocks, pi_coefficients


@dataclass(frozen=True, eq=False)
class QuadraticValue:
    """V(t, mu) = Var(mu)(P1) + mean^T P2 mean + mean^T phi + psi."""

    riccati: RiccatiSolution

    @property
    def model(self) -> LQModel:
        return self.riccati.model

    @property
    def T(self) -> float:
        return self.riccati.T


def _check_measure(qv: QuadraticValue, mu: EmpiricalMeasure):
    if mu.dim != qv.model.n:
        raise ValueError(f"measure has dimension {mu.dim}, model has n = {qv.model.n}")


def value_from_state(P1, P2, phi, psi, x: np.ndarray):
    """Ansatz value on a cloud array (..., N, n); broadcasts over leading axes."""
    m = cloud_mean(x)
    return cloud_variance(x, P1) + mean_quad(m, P2) + m @ phi + psi


def value_function(qv: QuadraticValue, t: float, mu: EmpiricalMeasure) -> float:
    _check_measure(qv, mu)
    return float(value_from_state(*qv.riccati.state(t), mu.samples))


@dataclass(frozen=True)
class LinearFeedback:
    """u(x, mean) = K_dev (x - mean) + K_mean mean + c."""

    K_dev: np.ndarray
    K_mean: np.ndarray
    c: np.ndarray
    t: float = float("nan")

    def __call__(self, x: np.ndarray, mbar: np.ndarray | None = None) -> np.ndarray:
        """Evaluate on a cloud array (..., N, n); ``mbar`` defaults to the cloud mean."""
        x = np.asarray(x, dtype=float)
        if mbar is None:
            mbar = x.mean(axis=-2, keepdims=True)
        return (x - mbar) @ self.K_dev.T + mbar @ self.K_mean.T + self.c

    def __add__(self, other: "LinearFeedback") -> "LinearFeedback":
        return LinearFeedback(self.K_dev + other.K_dev, self.K_mean + other.K_mean,
                              self.c + other.c, self.t)

    def scaled(self, eps: float) -> "LinearFeedback":
        return LinearFeedback(eps * self.K_dev, eps * self.K_mean, eps * self.c, self.t)


def feedback_from_state(model: LQModel, P1, P2, phi, t: float = float("nan")) -> LinearFeedback:
    """Minimizer of the control functional obtained by completing the square.

    Deviation gain -Pi1^-1 Pi3^T, mean gain -Pi2^-1 Pi4^T, offset -1/2 Pi2^-1 Pi5.
    """
    Pi1, Pi2, Pi3, Pi4, Pi5 = pi_coefficients(model, P1, P2, phi)
    try:
        L1 = np.linalg.cholesky(Pi1)
        L2 = np.linalg.cholesky(Pi2)
    except np.linalg.LinAlgError:
        raise ValueError(f"Pi1 or Pi2 is not positive definite at t = {t}") from None
    solve1 = lambda b: np.linalg.solve(L1.T, np.linalg.solve(L1, b))  # noqa: E731
    solve2 = lambda b: np.linalg.solve(L2.T, np.linalg.solve(L2, b))  # noqa: E731
    return LinearFeedback(K_dev=-solve1(Pi3.T), K_mean=-solve2(Pi4.T), c=-0.5 * solve2(Pi5), t=t)


def optimal_feedback(qv: QuadraticValue, t: float) -> LinearFeedback:
    P1, P2, phi, _ = qv.riccati.state(t)
    return feedback_from_state(qv.model, P1, P2, phi, t)


def _control_values(mu: EmpiricalMeasure, u, k: int) -> np.ndarray:
    U = u(mu.samples) if callable(u) else u
    U = np.asarray(U, dtype=float)
    if U.ndim == 1 and k == 1:
        U = U[:, None]
    if U.shape != (mu.size, k):
        raise ValueError(f"control values have shape {U.shape}, expected {(mu.size, k)}")
    return U


def psi_from_pi(pis, x: np.ndarray, U: np.ndarray) -> float:
    """Control functional for sample-wise controls U (N, k) on the cloud x (N, n)."""
    Pi1, Pi2, Pi3, Pi4, Pi5 = pis
    m = x.mean(axis=0)
    ubar = U.mean(axis=0)
    cross = np.einsum("ni,ij,nj->n", x - m, Pi3, U).mean()
    return float(cloud_variance(U, Pi1) + ubar @ Pi2 @ ubar + 2.0 * cross
                 + (2.0 * Pi4.T @ m + Pi5) @ ubar)


def psi_functional(qv: QuadraticValue, t: float, mu: EmpiricalMeasure, u) -> float:
    """Control functional at (t, mu) for a control map or an (N, k) array of control values."""
    _check_measure(qv, mu)
    return psi_from_pi(qv.riccati.pi(t), mu.samples, _control_values(mu, u, qv.model.k))


def psi_minimized_form(qv: QuadraticValue, t: float, mu: EmpiricalMeasure, u) -> float:
    """Same functional written as (distance to u*) + (value at u*)."""
    _check_measure(qv, mu)
    Pi1, Pi2, Pi3, Pi4, Pi5 = qv.riccati.pi(t)
    x = mu.samples
    m = x.mean(axis=0)
    gap = _control_values(mu, u, qv.model.k) - optimal_feedback(qv, t)(x)
    gbar = gap.mean(axis=0)
    S1 = Pi3 @ np.linalg.solve(Pi1, Pi3.T)
    S2 = Pi4 @ np.linalg.solve(Pi2, Pi4.T)
    x5 = np.linalg.solve(Pi2, Pi5)
    return float(cloud_variance(gap, Pi1) + gbar @ Pi2 @ gbar
                 - cloud_variance(x, S1) - m @ S2 @ m
                 - x5 @ Pi4.T @ m - 0.25 * Pi5 @ x5)


def psi_gradient(pis, x: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Analytic gradient of ``psi_from_pi`` with respect to each row of U."""
    Pi1, Pi2, Pi3, Pi4, Pi5 = pis
    N = x.shape[0]
    m = x.mean(axis=0)
    ubar = U.mean(axis=0)
    g = 2.0 * (U - ubar) @ Pi1 + 2.0 * ubar @ Pi2 + 2.0 * (x - m) @ Pi3 + 2.0 * Pi4.T @ m + Pi5
    return g / N


def hjb_residual_state(model: LQModel, state, derivative, mu: EmpiricalMeasure) -> float:
    """HJB right-hand side at the ansatz described by ``state`` and ``derivative``.

    ``state`` is (P1, P2, phi, psi) and ``derivative`` their time derivatives.
    The control part is evaluated sample-wise at the minimizer.
    """
    P1, P2, phi, _ = state
    dP1, dP2, dphi, dpsi = derivative
    x = mu.samples
    pis = pi_coefficients(model, P1, P2, phi)
    u_star = feedback_from_state(model, P1, P2, phi)(x)
    var_block, mean_block, lin_block = drift_blocks(model, P1, P2, phi)
    m = x.mean(axis=0)
    return float(psi_from_pi(pis, x, u_star)
                 + cloud_variance(x, dP1 + var_block)
                 + m @ (dP2 + mean_block) @ m
                 + m @ (dphi + lin_block)
                 + dpsi)


def hjb_residual(qv: QuadraticValue, t: float, mu: EmpiricalMeasure) -> float:
    if not (0.0 <= t < qv.T):
        raise ValueError(f"t = {t} outside [0, {qv.T})")
    _check_measure(qv, mu)
    ric = qv.riccati
    return hjb_residual_state(qv.model, ric.state(t), ric.derivative(t), mu)


# -- policies for simulation ------------------------------------------------

@dataclass
class FeedbackPolicy:
    """Time-dependent semi-feedback u(t, x_i, mean) for a cloud array (..., N, n).

    Gains are cached per time so repeated simulations on one grid reuse them.
    An optional ``perturbation`` is added to the optimal gains.
    """

    value: QuadraticValue
    perturbation: LinearFeedback | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def gains(self, t: float) -> LinearFeedback:
        key = round(float(t), 12)
        fb = self._cache.get(key)
        if fb is None:
            fb = optimal_feedback(self.value, min(max(t, 0.0), self.value.T))
            if self.perturbation is not None:
                fb = fb + self.perturbation
            self._cache[key] = fb
        return fb

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.gains(t)(x)


def random_perturbation(rng: np.random.Generator, n: int, k: int, scale: float = 1.0) -> LinearFeedback:
    return LinearFeedback(K_dev=rng.normal(scale=scale, size=(k, n)),
                          K_mean=rng.normal(scale=scale, size=(k, n)),
                          c=rng.normal(scale=scale, size=k))


def running_cost(model: LQModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Var(mu)(Q) + mean^T (Q + Qbar) mean + mean of u^T R u, over axis -2."""
    m = cloud_mean(x)
    return cloud_variance(x, model.Q) + mean_quad(m, model.Q + model.Qbar) + cloud_quad(u, model.R)


def terminal_cost(model: LQModel, x: np.ndarray) -> np.ndarray:
    m = cloud_mean(x)
    return cloud_variance(x, model.G) + mean_quad(m, model.G + model.Gbar)


SweepRow = tuple[float, float, float, int]


def value_sweep(qv: QuadraticValue, times, mu: EmpiricalMeasure) -> list[SweepRow]:
    """Rows (t, V, residual, n_samples); the residual is nan at t = T."""
    rows = []
    for t in times:
        r = hjb_residual(qv, t, mu) if t < qv.T else float("nan")
        rows.append((float(t), value_function(qv, t, mu), r, mu.size))
    return rows


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "V", "residual", "n_samples"])
        for t, v, r, n in rows:
            w.writerow([format(t, ".17g"), format(v, ".17g"), format(r, ".17g"), n])


Policy = Callable[[float, np.ndarray], np.ndarray]
