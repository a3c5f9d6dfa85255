"""Independent reference computations shared by the tests."""
import itertools

import numpy as np


def brute_w2(x, y):
    """W2 by enumerating every permutation coupling."""
    best = np.inf
    for p in itertools.permutations(range(len(x))):
        best = min(best, np.mean(np.sum((x - y[list(p)]) ** 2, axis=1)))
    return np.sqrt(best)


def scalar_riccati(t, a, b, q, r, g, T):
    """Closed form of p' = -(q + 2 a p - b^2 p^2 / r), p(T) = g.

    In reversed time the right side factors as -k (p - p+)(p - p-), whose
    logistic solution is written out below.
    """
    k = b * b / r
    gam = np.sqrt(a * a + k * q)
    pp, pm = (a + gam) / k, (a - gam) / k
    C = (g - pp) / (g - pm)
    e = C * np.exp(-2 * gam * (T - t))
    return (pp - pm * e) / (1 - e)
