"""Compiled inner loops.

Matrices here are tiny (n, k <= 16), so explicit loops beat BLAS calls,
whose per-call overhead dominates at this size.
"""
import numpy as np
from numba import njit

OK = 0
NOT_PD = 1
NONFINITE = 2


@njit(cache=True)
def _mm(X, Y):
    a, b = X.shape
    c = Y.shape[1]
    out = np.zeros((a, c))
    for i in range(a):
        for p in range(b):
            x = X[i, p]
            for j in range(c):
                out[i, j] += x * Y[p, j]
    return out


@njit(cache=True)
def _tmm(X, Y):
    """X^T Y."""
    b, a = X.shape
    c = Y.shape[1]
    out = np.zeros((a, c))
    for p in range(b):
        for i in range(a):
            x = X[p, i]
            for j in range(c):
                out[i, j] += x * Y[p, j]
    return out


@njit(cache=True)
def _sym(X):
    return 0.5 * (X + X.T)


@njit(cache=True)
def _chol(S):
    k = S.shape[0]
    L = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            s = S[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if not s > 0.0:
                    return L, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True)
def _chol_solve(L, Bm):
    k = L.shape[0]
    X = Bm.copy()
    for c in range(Bm.shape[1]):
        for i in range(k):
            s = X[i, c]
            for p in range(i):
                s -= L[i, p] * X[p, c]
            X[i, c] = s / L[i, i]
        for i in range(k - 1, -1, -1):
            s = X[i, c]
            for p in range(i + 1, k):
                s -= L[p, i] * X[p, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def riccati_rhs(P1, P2, phi, A, As, Bt, C, Cs, D, Q, QQ, R, beta):
    """Time derivatives of (P1, P2, phi, psi); phi is an (n, 1) column.

    ``As = A + Abar``, ``Cs = C + Cbar``, ``Bt = B + beta D``, ``QQ = Q + Qbar``.
    """
    Pi1 = _tmm(D, _mm(P1, D)) + R
    Pi2 = _tmm(D, _mm(P2, D)) + R
    Pi3 = _tmm(C, _mm(P1, D)) + _mm(P1, Bt)
    Pi4 = _tmm(Cs, _mm(P2, D)) + _mm(P2, Bt)
    Pi5 = _tmm(Bt, phi)
    L1, ok1 = _chol(Pi1)
    L2, ok2 = _chol(Pi2)
    if not (ok1 and ok2):
        z = np.zeros_like(P1)
        return z, z, np.zeros_like(phi), 0.0, False
    X1 = _chol_solve(L1, np.ascontiguousarray(Pi3.T))
    X2 = _chol_solve(L2, np.ascontiguousarray(Pi4.T))
    x5 = _chol_solve(L2, Pi5)
    P1C = _mm(P1, C)
    P2Cs = _mm(P2, Cs)
    P1A = _mm(P1, A)
    P2As = _mm(P2, As)
    d1 = -(Q + _tmm(C, P1C) + P1A + P1A.T + beta * (P1C + P1C.T) - _mm(Pi3, X1))
    d2 = -(QQ + _tmm(Cs, P2Cs) + P2As + P2As.T + beta * (P2Cs + P2Cs.T) - _mm(Pi4, X2))
    dphi = -(_tmm(As + beta * Cs, phi) - _mm(Pi4, x5))
    dpsi = 0.25 * _tmm(Pi5, x5)[0, 0]
    return _sym(d1), _sym(d2), dphi, dpsi, True


@njit(cache=True)
def _finite(X):
    for v in X.ravel():
        if not np.isfinite(v):
            return False
    return True


@njit(cache=True)
def rk4_backward(A, As, Bt, C, Cs, D, Q, QQ, R, beta, G, G2, T, M):
    """Integrate backward from t = T on the uniform grid t_j = j T / M.

    Returns node arrays (state and derivative) and a status pair
    (code, node index) where code is OK, NOT_PD or NONFINITE.
    """
    n = A.shape[0]
    h = T / M
    P1 = np.empty((M + 1, n, n))
    P2 = np.empty((M + 1, n, n))
    phi = np.empty((M + 1, n))
    psi = np.empty(M + 1)
    dP1 = np.zeros((M + 1, n, n))
    dP2 = np.zeros((M + 1, n, n))
    dphi = np.zeros((M + 1, n))
    dpsi = np.zeros(M + 1)

    p1 = G.copy()
    p2 = G2.copy()
    f = np.zeros((n, 1))
    s = 0.0
    P1[M] = p1
    P2[M] = p2
    phi[M] = 0.0
    psi[M] = 0.0
    for j in range(M, 0, -1):
        a1, a2, a3, a4, ok = riccati_rhs(p1, p2, f, A, As, Bt, C, Cs, D, Q, QQ, R, beta)
        if not ok:
            return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, NOT_PD, j
        dP1[j] = a1
        dP2[j] = a2
        dphi[j] = a3[:, 0]
        dpsi[j] = a4
        b1, b2, b3, b4, ok = riccati_rhs(_sym(p1 - 0.5 * h * a1), _sym(p2 - 0.5 * h * a2),
                                         f - 0.5 * h * a3, A, As, Bt, C, Cs, D, Q, QQ, R, beta)
        if not ok:
            return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, NOT_PD, j
        c1, c2, c3, c4, ok = riccati_rhs(_sym(p1 - 0.5 * h * b1), _sym(p2 - 0.5 * h * b2),
                                         f - 0.5 * h * b3, A, As, Bt, C, Cs, D, Q, QQ, R, beta)
        if not ok:
            return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, NOT_PD, j
        e1, e2, e3, e4, ok = riccati_rhs(_sym(p1 - h * c1), _sym(p2 - h * c2),
                                         f - h * c3, A, As, Bt, C, Cs, D, Q, QQ, R, beta)
        if not ok:
            return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, NOT_PD, j
        p1 = _sym(p1 - h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + e1))
        p2 = _sym(p2 - h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + e2))
        f = f - h / 6.0 * (a3 + 2.0 * b3 + 2.0 * c3 + e3)
        s = s - h / 6.0 * (a4 + 2.0 * b4 + 2.0 * c4 + e4)
        if not (_finite(p1) and _finite(p2) and _finite(f) and np.isfinite(s)):
            return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, NONFINITE, j - 1
        P1[j - 1] = p1
        P2[j - 1] = p2
        phi[j - 1] = f[:, 0]
        psi[j - 1] = s
    a1, a2, a3, a4, ok = riccati_rhs(p1, p2, f, A, As, Bt, C, Cs, D, Q, QQ, R, beta)
    if not ok:
        return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, NOT_PD, 0
    dP1[0] = a1
    dP2[0] = a2
    dphi[0] = a3[:, 0]
    dpsi[0] = a4
    return P1, P2, phi, psi, dP1, dP2, dphi, dpsi, OK, -1
