"""Backward integration of the Riccati system for (P1, P2, phi, psi).

The right-hand sides come from inserting the quadratic ansatz

    V(t, mu) = Var(mu)(P1) + mean^T P2 mean + mean^T phi + psi

into the HJB equation and completing the square in the control:

    P1' = -[Q + C^T P1 C + P1 A + A^T P1 + beta (P1 C + C^T P1) - Pi3 Pi1^-1 Pi3^T]
    P2' = -[Q + Qbar + Cs^T P2 Cs + P2 As + As^T P2 + beta (P2 Cs + Cs^T P2) - Pi4 Pi2^-1 Pi4^T]
    phi' = -[(As + beta Cs)^T phi - Pi4 Pi2^-1 Pi5]
    psi' = 1/4 Pi5^T Pi2^-1 Pi5

with As = A + Abar, Cs = C + Cbar and terminal data (G, G + Gbar, 0, 0).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import LQModel


class RiccatiError(RuntimeError):
    """Integration left the region where Pi1, Pi2 are positive definite, or blew up."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


def pi_coefficients(model: LQModel, P1, P2, phi):
    """Return (Pi1, Pi2, Pi3, Pi4, Pi5) for the given (P1, P2, phi)."""
    P1 = np.asarray(P1, dtype=float)
    P2 = np.asarray(P2, dtype=float)
    phi = np.asarray(phi, dtype=float).reshape(-1)
    n = model.n
    if P1.shape != (n, n) or P2.shape != (n, n) or phi.shape != (n,):
        raise ValueError(f"expected P1, P2 of shape {(n, n)} and phi of length {n}")
    D = model.D
    Bt = model.B + model.beta * D
    Pi1 = D.T @ P1 @ D + model.R
    Pi2 = D.T @ P2 @ D + model.R
    Pi3 = model.C.T @ P1 @ D + P1 @ Bt
    Pi4 = (model.C + model.Cbar).T @ P2 @ D + P2 @ Bt
    Pi5 = Bt.T @ phi
    return Pi1, Pi2, Pi3, Pi4, Pi5


def drift_blocks(model: LQModel, P1, P2, phi):
    """Control-free parts of the HJB generator, one per ansatz term.

    Returns the matrices multiplying Var(mu)(.) and mean^T(.)mean and the
    vector multiplying mean, excluding the time derivatives.
    """
    A, C, beta = model.A, model.C, model.beta
    As = A + model.Abar
    Cs = C + model.Cbar
    var_block = model.Q + C.T @ P1 @ C + P1 @ A + A.T @ P1 + beta * (P1 @ C + C.T @ P1)
    mean_block = (model.Q + model.Qbar + Cs.T @ P2 @ Cs + P2 @ As + As.T @ P2
                  + beta * (P2 @ Cs + Cs.T @ P2))
    lin_block = (As + beta * Cs).T @ np.asarray(phi, dtype=float)
    return var_block, mean_block, lin_block


def riccati_rhs(model: LQModel, P1, P2, phi):
    """Plain numpy evaluation of (P1', P2', phi', psi')."""
    Pi1, Pi2, Pi3, Pi4, Pi5 = pi_coefficients(model, P1, P2, phi)
    var_block, mean_block, lin_block = drift_blocks(model, P1, P2, phi)
    d1 = -(var_block - Pi3 @ np.linalg.solve(Pi1, Pi3.T))
    d2 = -(mean_block - Pi4 @ np.linalg.solve(Pi2, Pi4.T))
    x5 = np.linalg.solve(Pi2, Pi5)
    dphi = -(lin_block - Pi4 @ x5)
    dpsi = 0.25 * float(Pi5 @ x5)
    return 0.5 * (d1 + d1.T), 0.5 * (d2 + d2.T), dphi, dpsi


def _kernel_args(model: LQModel):
    c = np.ascontiguousarray
    return (c(model.A), c(model.A + model.Abar), c(model.B + model.beta * model.D), c(model.C),
            c(model.C + model.Cbar), c(model.D), c(model.Q), c(model.Q + model.Qbar),
            c(model.R), float(model.beta))


def compiled_rhs(model: LQModel, P1, P2, phi):
    """The compiled right-hand side used by the integrator (for cross-checks)."""
    d1, d2, dphi, dpsi, ok = _kernels.riccati_rhs(
        np.ascontiguousarray(P1, dtype=float), np.ascontiguousarray(P2, dtype=float),
        np.asarray(phi, dtype=float).reshape(-1, 1).copy(), *_kernel_args(model))
    if not ok:
        raise RiccatiError("Pi1 or Pi2 not positive definite")
    return d1, d2, dphi[:, 0], dpsi


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Node values on a uniform grid; piecewise-linear in between.

    ``dP1``, ``dP2``, ``dphi``, ``dpsi`` hold the right-hand side evaluated
    at each node, so time derivatives never come from differencing the grid.
    """

    model: LQModel
    grid: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    dP1: np.ndarray
    dP2: np.ndarray
    dphi: np.ndarray
    dpsi: np.ndarray

    def __post_init__(self):
        for name in ("grid", "P1", "P2", "phi", "psi", "dP1", "dP2", "dphi", "dpsi"):
            getattr(self, name).setflags(write=False)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def steps(self) -> int:
        return len(self.grid) - 1

    def _weights(self, t: float):
        if not (0.0 <= t <= self.T):
            raise ValueError(f"t = {t} outside [0, {self.T}]")
        M = self.steps
        x = t / self.T * M
        j = min(int(np.floor(x)), M - 1)
        w = x - j
        if w < 1e-12:
            return j, j, 0.0
        if w > 1 - 1e-12:
            return j + 1, j + 1, 0.0
        return j, j + 1, w

    def _interp(self, arr, t):
        i, j, w = self._weights(t)
        if w == 0.0:
            return np.array(arr[i])
        return (1.0 - w) * arr[i] + w * arr[j]

    def state(self, t: float):
        """(P1, P2, phi, psi) at time t."""
        return (self._interp(self.P1, t), self._interp(self.P2, t),
                self._interp(self.phi, t), float(self._interp(self.psi, t)))

    def derivative(self, t: float):
        """Stored right-hand side at t, interpolated like the state."""
        return (self._interp(self.dP1, t), self._interp(self.dP2, t),
                self._interp(self.dphi, t), float(self._interp(self.dpsi, t)))

    def pi(self, t: float):
        P1, P2, phi, _ = self.state(t)
        return pi_coefficients(self.model, P1, P2, phi)

    def to_csv(self, path) -> None:
        n = self.model.n
        idx = [(i + 1, j + 1) for i in range(n) for j in range(n)]
        header = (["t"] + [f"P1_{i}{j}" for i, j in idx] + [f"P2_{i}{j}" for i, j in idx]
                  + [f"phi_{i + 1}" for i in range(n)] + ["psi"])
        fmt = lambda v: format(float(v), ".17g")  # noqa: E731
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for m, t in enumerate(self.grid):
                row = [t, *self.P1[m].ravel(), *self.P2[m].ravel(), *self.phi[m], self.psi[m]]
                w.writerow([fmt(v) for v in row])


def solve_riccati(model: LQModel, steps: int = 1000) -> RiccatiSolution:
    """Classical RK4 on ``steps`` uniform steps, backward from t = T."""
    if int(steps) < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    steps = int(steps)
    model.check_assumptions()
    G2 = model.G + model.Gbar
    out = _kernels.rk4_backward(*_kernel_args(model), np.ascontiguousarray(model.G),
                                np.ascontiguousarray(G2), model.T, steps)
    P1, P2, phi, psi, dP1, dP2, dphi, dpsi, code, node = out
    grid = np.linspace(0.0, model.T, steps + 1)
    if code == _kernels.NOT_PD:
        raise RiccatiError(f"Pi1 or Pi2 lost positive definiteness at t = {grid[node]:.6g}",
                           time=grid[node])
    if code == _kernels.NONFINITE:
        raise RiccatiError(f"non-finite Riccati values at t = {grid[node]:.6g}", time=grid[node])
    P1[-1] = model.G
    P2[-1] = G2
    return RiccatiSolution(model, grid, P1, P2, phi, psi, dP1, dP2, dphi, dpsi)
