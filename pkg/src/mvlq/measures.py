"""Empirical probability measures on R^n and the functionals built on them.

A measure is an equal-weight sample cloud.  The array-level helpers
(``cloud_*``) operate on arrays shaped ``(..., N, n)`` so that batches of
clouds (one per common-noise path) can be processed in one call; the
``EmpiricalMeasure`` functions are thin wrappers over them.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

ASSIGNMENT_CAP = 512


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform measure (1/N) sum_i delta_{x_i} on R^n.

    Samples are stored in lexicographic order, so every functional of the
    measure sees the same array whatever order the atoms were given in.
    """

    samples: np.ndarray

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"samples must be an (N, n) array with N, n >= 1, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples contain non-finite entries")
        x = x[np.lexsort(x.T[::-1])]
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def point_mass(cls, a) -> "EmpiricalMeasure":
        return cls(np.atleast_1d(np.asarray(a, dtype=float))[None, :])

    def shifted(self, c) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.samples + np.asarray(c, dtype=float))

    def __len__(self):
        return self.size


# -- array level -------------------------------------------------------------

def cloud_mean(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=-2)


def cloud_quad(x: np.ndarray, Pi: np.ndarray) -> np.ndarray:
    """(1/N) sum_i x_i^T Pi x_i along axis -2."""
    return np.einsum("...i,ij,...j->...", x, Pi, x).mean(axis=-1)


def cloud_variance(x: np.ndarray, Pi: np.ndarray) -> np.ndarray:
    """Var(mu)(Pi) computed from centered samples.

    Centering first avoids the cancellation in quad - mean^T Pi mean, and the
    two forms agree algebraically.
    """
    y = x - x.mean(axis=-2, keepdims=True)
    return cloud_quad(y, Pi)


def mean_quad(m: np.ndarray, Pi: np.ndarray) -> np.ndarray:
    return np.einsum("...i,ij,...j->...", m, Pi, m)


# -- measure level -----------------------------------------------------------

def _check_square(mu: EmpiricalMeasure, Pi, name="Pi") -> np.ndarray:
    Pi = np.atleast_2d(np.asarray(Pi, dtype=float))
    if Pi.shape != (mu.dim, mu.dim):
        raise ValueError(f"{name} has shape {Pi.shape}, expected {(mu.dim, mu.dim)}")
    return Pi


def mean(mu: EmpiricalMeasure) -> np.ndarray:
    return cloud_mean(mu.samples)


def quad_moment(mu: EmpiricalMeasure, Pi) -> float:
    """Second moment functional int x^T Pi x mu(dx)."""
    return float(cloud_quad(mu.samples, _check_square(mu, Pi)))


def variance_functional(mu: EmpiricalMeasure, Pi) -> float:
    """Var(mu)(Pi) = int x^T Pi x dmu - mean^T Pi mean."""
    return float(cloud_variance(mu.samples, _check_square(mu, Pi)))


def pushforward_stats(mu: EmpiricalMeasure, u: Callable[[np.ndarray], np.ndarray], R):
    """Mean, R-quadratic moment and R-variance of the image cloud {u(x_i)}.

    ``u`` maps an (N, n) array to an (N, k) array.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    k = R.shape[0]
    v = np.asarray(u(mu.samples), dtype=float)
    if v.ndim == 1 and k == 1:
        v = v[:, None]
    if v.shape != (mu.size, k):
        raise ValueError(f"control map returned shape {v.shape}, expected {(mu.size, k)}")
    return cloud_mean(v), float(cloud_quad(v, R)), float(cloud_variance(v, R))


def second_moment_distance(mu: EmpiricalMeasure) -> float:
    """W2(mu, delta_0) = sqrt(int |x|^2 dmu)."""
    return float(np.sqrt(np.mean(np.sum(mu.samples**2, axis=1))))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, cap: int = ASSIGNMENT_CAP) -> float:
    """Exact W2 between two equal-size, equal-weight clouds.

    1D uses the sorted (quantile) coupling; higher dimensions solve the
    optimal assignment exactly and refuse clouds larger than ``cap``.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.size != nu.size:
        raise ValueError(f"sample counts differ: {mu.size} vs {nu.size}")
    if mu.dim == 1:
        a = np.sort(mu.samples[:, 0], kind="stable")
        b = np.sort(nu.samples[:, 0], kind="stable")
        return float(np.sqrt(np.mean((a - b) ** 2)))
    if mu.size > cap:
        raise ValueError(f"exact assignment refused for N={mu.size} > cap={cap}")
    cost = np.sum((mu.samples[:, None, :] - nu.samples[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


# -- CSV ---------------------------------------------------------------------

def write_csv(mu: EmpiricalMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(mu.dim)])
        for row in mu.samples:
            w.writerow([format(v, ".17g") for v in row])


def read_csv(path) -> EmpiricalMeasure:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if not header or not all(h.strip().startswith("x") for h in header):
        raise ValueError(f"{path}: header x1..xn required, got {header}")
    return EmpiricalMeasure(np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float))
