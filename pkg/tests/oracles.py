"""Independent reference computations used to freeze golden values.

Nothing here imports the package's generator or evolution code: constraints
are evaluated from coordinates, the rate matrix is filled by explicit loops,
and time evolution uses a dense matrix exponential.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.linalg


def sites(d, n):
    """Lexicographic coordinate list (x_1 most significant)."""
    return list(itertools.product(range(1, n + 1), repeat=d))


def ne_constraint(x, d, n):
    out = []
    for j in range(d):
        if x[j] > 1:
            y = list(x)
            y[j] -= 1
            out.append(tuple(y))
    return out


def maximal_constraint(x, d, n):
    out = []
    for alpha in itertools.product((0, 1), repeat=d):
        if any(alpha):
            y = tuple(x[j] - alpha[j] for j in range(d))
            if min(y) >= 1:
                out.append(y)
    return out


def dense_generator(d, n, p, family="northeast"):
    """Dense Q by explicit loops; bit k of the state id is site k's spin."""
    cs = sites(d, n)
    pos = {x: k for k, x in enumerate(cs)}
    rule = ne_constraint if family == "northeast" else maximal_constraint
    N = len(cs)
    Q = np.zeros((1 << N, 1 << N))
    for s in range(1 << N):
        for k, x in enumerate(cs):
            if all(not (s >> pos[y]) & 1 for y in rule(x, d, n)):
                spin = (s >> k) & 1
                Q[s, s ^ (1 << k)] = (1 - p) if spin else p
        Q[s, s] = -Q[s].sum()
    return Q


def product_pi(N, p):
    ones = np.array([bin(s).count("1") for s in range(1 << N)])
    return p ** ones * (1 - p) ** (N - ones)


def dense_gap(Q, pi):
    s = np.sqrt(pi)
    S = (s[:, None] * Q) / s[None, :]
    w = np.sort(np.linalg.eigvalsh(0.5 * (S + S.T)))
    return -w[-2]


def worst_tv(Q, pi, t):
    P = scipy.linalg.expm(t * Q)
    return float(0.5 * np.abs(P - pi[None, :]).sum(axis=1).max())


def worst_chi2(Q, pi, t):
    P = scipy.linalg.expm(t * Q)
    return float(((P * P) / pi[None, :]).sum(axis=1).max() - 1.0)


def mixing_time(Q, pi, threshold=0.25, mode="tv", tol=1e-6):
    f = worst_tv if mode == "tv" else worst_chi2
    lo, hi = 0.0, 1.0
    while f(Q, pi, hi) > threshold:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(Q, pi, mid) <= threshold:
            hi = mid
        else:
            lo = mid
    return hi


def killed_top(Q, pi, V):
    s = np.sqrt(pi)
    H = Q - np.diag(V)
    S = (s[:, None] * H) / s[None, :]
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def fk_expectation(Q, pi, V, t):
    return float(pi @ scipy.linalg.expm(t * (Q - np.diag(V))) @ np.ones(len(pi)))


def lsi_indicator(Q, pi):
    f = np.zeros(len(pi))
    f[-1] = 1.0
    D = 0.5 * sum(pi[a] * Q[a, b] * (f[b] - f[a]) ** 2
                  for a in range(len(pi)) for b in range(len(pi)) if a != b)
    m = pi[-1]
    return D / (-m * math.log(m))
