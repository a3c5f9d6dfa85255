"""Coefficient bundle of the linear-quadratic mean-field problem."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

PSD_TOL = -1e-10


class AssumptionError(ValueError):
    """The model violates the positivity assumptions on (Q, Qbar, G, Gbar, R)."""


def min_eig(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(S)[0])


def _sym(M, shape, name):
    M = np.array(np.atleast_2d(np.asarray(M, dtype=float)))
    if M.shape != shape:
        raise ValueError(f"{name} has shape {M.shape}, expected {shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(M))):
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def _mat(M, shape, name):
    M = np.array(np.atleast_2d(np.asarray(M, dtype=float)))
    if M.shape != shape:
        raise ValueError(f"{name} has shape {M.shape}, expected {shape}")
    return M


@dataclass(frozen=True, eq=False)
class LQModel:
    """dX = (A X + Abar E X + B u) dt + (C X + Cbar E X + D u) dW with cost

    Var(.)(Q) + mean^T (Q + Qbar) mean + <u, R u> running and
    Var(.)(G) + mean^T (G + Gbar) mean terminal, aggregated by the
    g-expectation with g(z) = beta z.

    ``A``, ``B``, ``Q``, ``R``, ``G`` are required; the mean-field and
    diffusion matrices default to zero.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray
    Abar: np.ndarray = None
    C: np.ndarray = None
    Cbar: np.ndarray = None
    D: np.ndarray = None
    Qbar: np.ndarray = None
    Gbar: np.ndarray = None
    beta: float = 0.0
    T: float = 1.0
    delta_pd: float = 1e-8
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        A = np.array(np.atleast_2d(np.asarray(self.A, dtype=float)))
        n = A.shape[0]
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape[0] != n and B.size == n:
            B = B.reshape(n, 1)
        k = B.shape[1]
        zn, znk = np.zeros((n, n)), np.zeros((n, k))
        get = lambda v, z: z if v is None else v  # noqa: E731
        set_ = lambda name, v: object.__setattr__(self, name, v)  # noqa: E731
        set_("A", _mat(A, (n, n), "A"))
        set_("B", _mat(B, (n, k), "B"))
        set_("Abar", _mat(get(self.Abar, zn), (n, n), "Abar"))
        set_("C", _mat(get(self.C, zn), (n, n), "C"))
        set_("Cbar", _mat(get(self.Cbar, zn), (n, n), "Cbar"))
        set_("D", _mat(get(self.D, znk), (n, k), "D"))
        set_("Q", _sym(self.Q, (n, n), "Q"))
        set_("Qbar", _sym(get(self.Qbar, zn), (n, n), "Qbar"))
        set_("G", _sym(self.G, (n, n), "G"))
        set_("Gbar", _sym(get(self.Gbar, zn), (n, n), "Gbar"))
        set_("R", _sym(self.R, (k, k), "R"))
        set_("beta", float(self.beta))
        set_("T", float(self.T))
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                if not np.all(np.isfinite(v)):
                    raise ValueError(f"{f.name} has non-finite entries")
                v.setflags(write=False)
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.validate:
            self.check_assumptions()

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    def assumption_report(self) -> dict[str, float]:
        """Smallest eigenvalue of each matrix constrained by the positivity assumption."""
        return {
            "Q": min_eig(self.Q),
            "Q+Qbar": min_eig(self.Q + self.Qbar),
            "G": min_eig(self.G),
            "G+Gbar": min_eig(self.G + self.Gbar),
            "R-delta*I": min_eig(self.R) - self.delta_pd,
        }

    def check_assumptions(self) -> None:
        bad = {k: v for k, v in self.assumption_report().items() if v < PSD_TOL}
        if bad:
            detail = ", ".join(f"min eig({k}) = {v:.3g}" for k, v in bad.items())
            raise AssumptionError(f"positivity assumption violated: {detail}")

    def replace(self, **changes) -> "LQModel":
        return replace(self, **changes)

    @classmethod
    def zero(cls, n: int = 1, k: int = 1, T: float = 1.0) -> "LQModel":
        """All-zero data with R = I: the value function vanishes identically."""
        z = np.zeros((n, n))
        return cls(A=z, B=np.zeros((n, k)), Q=z, R=np.eye(k), G=z, T=T)

    @classmethod
    def scalar(cls, a=0.0, b=1.0, q=1.0, r=1.0, g=1.0, *, abar=0.0, c=0.0, cbar=0.0,
               d=0.0, qbar=0.0, gbar=0.0, beta=0.0, T=1.0) -> "LQModel":
        s = lambda v: [[float(v)]]  # noqa: E731
        return cls(A=s(a), B=s(b), Q=s(q), R=s(r), G=s(g), Abar=s(abar), C=s(c),
                   Cbar=s(cbar), D=s(d), Qbar=s(qbar), Gbar=s(gbar), beta=beta, T=T)


def _random_psd(rng, n, scale):
    L = rng.normal(scale=scale, size=(n, n))
    return L @ L.T / n


def random_model(rng: np.random.Generator, n: int = 1, k: int = 1, *, scale: float = 0.5,
                 beta: float | None = None, T: float = 1.0) -> LQModel:
    """Draw a random model satisfying the positivity assumptions.

    Qbar and Gbar are allowed to be indefinite while Q + Qbar, G + Gbar stay PSD.
    """
    def g(*shape):
        return rng.normal(scale=scale, size=shape)

    Q = _random_psd(rng, n, 1.0)
    G = _random_psd(rng, n, 1.0)
    theta_q, theta_g = rng.uniform(0, 1, size=2)
    Qbar = _random_psd(rng, n, 0.7) - theta_q * Q
    Gbar = _random_psd(rng, n, 0.7) - theta_g * G
    R = _random_psd(rng, k, 0.5) + rng.uniform(0.5, 1.5) * np.eye(k)
    if beta is None:
        beta = float(rng.uniform(-0.5, 0.5))
    return LQModel(A=g(n, n), Abar=g(n, n), B=g(n, k), C=g(n, n), Cbar=g(n, n), D=g(n, k),
                   Q=Q, Qbar=Qbar, G=G, Gbar=Gbar, R=R, beta=beta, T=T)
