"""Exact finite-state analysis of an oriented KCM.

Everything here works on the full ``2**N``-state space of a region (the whole
box or a lower set ``U_i``) and is limited by the state-space cap of
:mod:`kcm.measure`.  Reversibility is exploited throughout: eigenproblems
are solved for the symmetrised generator ``D^{1/2} Q D^{-1/2}`` with
``D = diag(pi)``, which has the same spectrum as ``Q``.

The worst case over initial laws in the mixing times is taken over point
masses; both the TV distance and the chi-square variance are convex in the
initial law, so the supremum is attained at a point mass.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import poisson

from .errors import ConvergenceError, IrreducibilityError, ValidationError
from .lattice import Model, is_lower_closed
from .measure import (DEFAULT_STATE_CAP, DistributionVector, check_capacity,
                      product_weights, renormalize)

log = logging.getLogger(__name__)

DENSE_THRESHOLD = 2 ** 14
UNIFORMIZATION_TOL = 1e-10
MAX_TERMS = 10_000_000
SIMPLE_ZERO_TOL = 1e-9


@dataclass
class GeneratorMatrix:
    """Sparse rate matrix ``Q`` of the KCM on ``{0,1}^sites``."""

    Q: sp.csr_matrix
    sites: tuple[int, ...]
    pi: np.ndarray
    model: Model = field(repr=False)

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    @property
    def uniformization_rate(self) -> float:
        return float(np.max(np.abs(self.Q.diagonal())))

    def symmetrized(self) -> sp.csr_matrix:
        """``D^{1/2} Q D^{-1/2}`` (symmetric by detailed balance)."""
        s = np.sqrt(self.pi)
        S = sp.diags(s) @ self.Q @ sp.diags(1.0 / s)
        # exact symmetry up to round-off; average the two triangles
        return ((S + S.T) * 0.5).tocsr()

    def dirichlet_form(self, f: np.ndarray) -> float:
        """``-pi(f Q f) = (1/2) sum pi(s) Q(s,t) (f(t) - f(s))**2``."""
        f = np.asarray(f, dtype=float)
        return float(-np.dot(self.pi * f, self.Q @ f))


def _region_sites(model: Model, region) -> tuple[int, ...]:
    if region is None:
        return tuple(range(model.n_sites))
    sites = tuple(sorted(int(k) for k in region))
    if not is_lower_closed(model, sites):
        raise ValidationError("region is not closed under the constraint family")
    return sites


def build_generator(model: Model, region=None, cap: int = DEFAULT_STATE_CAP) -> GeneratorMatrix:
    """Assemble ``Q[s, s^x] = c_x(s) * (p if s_x = 0 else q)``, diagonal = -row sum."""
    sites = _region_sites(model, region)
    m = len(sites)
    size = check_capacity(m, cap)
    bitpos = {s: j for j, s in enumerate(sites)}
    ids = np.arange(size, dtype=np.int64)
    rows, cols, vals = [], [], []
    for j, x in enumerate(sites):
        blocked = np.zeros(size, dtype=bool)
        for y in model.neighborhood(x):
            blocked |= ((ids >> bitpos[y]) & 1).astype(bool)
        allowed = ~blocked
        spin = (ids >> j) & 1
        rate = np.where(spin == 0, model.p, model.q)
        src = ids[allowed]
        rows.append(src)
        cols.append(src ^ (1 << j))
        vals.append(rate[allowed])
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.empty(0)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    Q = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    Q.sort_indices()
    pi = product_weights(model, m, cap)
    return GeneratorMatrix(Q, sites, pi / pi.sum(), model)


@dataclass
class SpectrumResult:
    gap: float
    method: str
    residual: float
    eigenvector: np.ndarray = field(repr=False, default=None)

    def to_record(self, model: Model, runtime: float = 0.0) -> dict:
        return _record(model, "spectral_gap", self.gap, self.method, self.residual, runtime)


def _record(model, quantity, value, method, residual, runtime):
    return {"model": model.constraints.kind, "d": model.geometry.d, "n": model.geometry.n,
            "p": model.p, "quantity": quantity, "value": float(value), "method": method,
            "residual": float(residual), "runtime_seconds": float(runtime)}


def _top_two(S: sp.csr_matrix, method: str):
    """Two largest eigenpairs of the symmetric matrix ``S`` (descending)."""
    if method == "dense":
        w, v = scipy.linalg.eigh(S.toarray())
        return w[::-1][:2], v[:, ::-1][:, :2]
    n = S.shape[0]
    v0 = np.ones(n) / math.sqrt(n)
    w, v = spla.eigsh(S, k=2, which="LA", tol=1e-13, v0=v0, ncv=min(n, 40), maxiter=100000)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def _choose_method(n_states: int, method: Optional[str]) -> str:
    if method is None:
        return "dense" if n_states <= DENSE_THRESHOLD else "iterative"
    if method not in ("dense", "iterative"):
        raise ValidationError(f"unknown eigensolver method {method!r}")
    return method


def spectral_gap(generator: GeneratorMatrix, method: Optional[str] = None) -> SpectrumResult:
    """Smallest positive eigenvalue of ``-Q``.

    Raises :class:`IrreducibilityError` if the zero eigenvalue is not simple.
    """
    n = generator.n_states
    if n == 1:
        raise IrreducibilityError("a one-state chain has no spectral gap")
    method = _choose_method(n, method)
    S = generator.symmetrized()
    if method == "iterative" and n <= 3:
        method = "dense"
    w, v = _top_two(S, method)
    if abs(w[0]) > 1e-8 * max(1.0, generator.uniformization_rate):
        raise ConvergenceError(f"top eigenvalue {w[0]:.3e} of the generator is not zero")
    gap = -float(w[1])
    if gap <= SIMPLE_ZERO_TOL:
        raise IrreducibilityError(f"zero eigenvalue is not simple (second eigenvalue {w[1]:.3e})")
    vec = v[:, 1]
    residual = float(np.linalg.norm(S @ vec - w[1] * vec))
    return SpectrumResult(gap, method, residual, vec)


def _poisson_weights(mean: float, tol: float, max_terms: int) -> np.ndarray:
    k_max = int(poisson.isf(tol, mean)) + 1
    while poisson.sf(k_max, mean) >= tol:
        k_max += 1
    if k_max > max_terms:
        raise ConvergenceError(f"uniformization needs {k_max} terms (cap {max_terms})")
    return poisson.pmf(np.arange(k_max + 1), mean)


def uniformize(rows: np.ndarray, Q: sp.spmatrix, t: float, tol: float = UNIFORMIZATION_TOL,
               max_terms: int = MAX_TERMS) -> np.ndarray:
    """``rows @ expm(t Q)`` for a rate matrix (or sub-generator) ``Q``.

    ``P = I + Q / L`` with ``L = max |Q_ss|`` and
    ``expm(tQ) = sum_k Poisson(L t; k) P^k`` truncated where the Poisson
    tail drops below ``tol``.  ``rows`` is one vector or a stack of them.
    """
    if t < 0:
        raise ValidationError("time must be nonnegative")
    rows = np.asarray(rows, dtype=float)
    single = rows.ndim == 1
    X = np.array(rows.reshape(1, -1) if single else rows).T.copy()
    rate = float(np.max(np.abs(Q.diagonal()))) if Q.shape[0] else 0.0
    if t == 0 or rate == 0:
        out = X.T
        return out[0] if single else out
    PT = (sp.identity(Q.shape[0], format="csr") + Q / rate).T.tocsr()
    w = _poisson_weights(rate * t, tol, max_terms)
    acc = w[0] * X
    for wk in w[1:]:
        X = PT @ X
        acc += wk * X
    out = acc.T
    return out[0] if single else out


def evolve_distribution(generator: GeneratorMatrix, dist: DistributionVector, t: float,
                        tolerance: float = UNIFORMIZATION_TOL, max_terms: int = MAX_TERMS) -> DistributionVector:
    """``nu_t = nu expm(t Q)`` by uniformization, renormalized."""
    if dist.sites != generator.sites:
        raise ValidationError("distribution and generator live on different regions")
    if t < 0:
        raise ValidationError("time must be nonnegative")
    if t == 0:
        return dist
    w = uniformize(dist.weights, generator.Q, t, tolerance, max_terms)
    return DistributionVector(renormalize(w, "evolved distribution"), dist.sites, dist.label)


def _worst_distance(generator: GeneratorMatrix, t: float, mode: str, block: int = 512) -> float:
    n = generator.n_states
    pi = generator.pi
    worst = 0.0
    for start in range(0, n, block):
        stop = min(n, start + block)
        rows = np.zeros((stop - start, n))
        rows[np.arange(stop - start), np.arange(start, stop)] = 1.0
        ev = uniformize(rows, generator.Q, t)
        ev = np.clip(ev, 0.0, None)
        ev /= ev.sum(axis=1, keepdims=True)
        if mode == "tv":
            dist = 0.5 * np.abs(ev - pi).sum(axis=1)
        else:
            dist = (ev * ev / pi).sum(axis=1) - 1.0
        worst = max(worst, float(dist.max()))
    return worst


@dataclass
class MixingResult:
    time: float
    mode: str
    threshold: float
    trace: list = field(default_factory=list)

    def to_record(self, model: Model, runtime: float = 0.0) -> dict:
        name = "T_mix" if self.mode == "tv" else "T_2"
        return _record(model, name, self.time, "uniformization+bisection", 0.0, runtime)


def worst_case_distance(model: Model, t: float, mode: str = "tv", cap: int = DEFAULT_STATE_CAP,
                        generator: Optional[GeneratorMatrix] = None) -> float:
    """``max over point masses delta_s`` of TV or chi-square distance at time ``t``."""
    if mode not in ("tv", "chi2"):
        raise ValidationError(f"unknown mixing mode {mode!r}")
    gen = generator or build_generator(model, cap=cap)
    return _worst_distance(gen, t, mode)


def mixing_time_exact(model: Model, threshold: float = 0.25, mode: str = "tv",
                      tol: float = 1e-4, cap: int = DEFAULT_STATE_CAP) -> MixingResult:
    """Smallest ``t`` whose worst-case distance to ``pi`` is ``<= threshold``.

    ``mode="tv"`` gives ``T_mix``, ``mode="chi2"`` the variance-based
    ``T_2``.  The bracket starts at ``[0, 20 N / gap]`` and doubles on
    failure; bisection stops at width ``tol``.  Every evaluation is kept
    in ``trace`` as ``(t, distance)``.
    """
    if mode not in ("tv", "chi2"):
        raise ValidationError(f"unknown mixing mode {mode!r}")
    gen = build_generator(model, cap=cap)
    trace = []

    def dist(t):
        v = _worst_distance(gen, t, mode)
        trace.append((t, v))
        return v

    if dist(0.0) <= threshold:
        return MixingResult(0.0, mode, threshold, trace)
    gap = spectral_gap(gen).gap if gen.n_states > 1 else 1.0
    lo, hi = 0.0, 20.0 * model.n_sites / gap
    while dist(hi) > threshold:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dist(mid) <= threshold:
            hi = mid
        else:
            lo = mid
    trace.sort()
    return MixingResult(hi, mode, threshold, trace)


def delta_threshold(q: float, d: int) -> float:
    """Largest mixing weight for which the second branch is ``<= -q**d / 2``."""
    u = q ** d
    delta = (2.0 * (1.0 - math.sqrt(1.0 - u)) - u) / (4.0 * u)
    return min(max(delta, np.finfo(float).tiny), 1.0)


def analytic_c0(q: float, d: int, gap: float) -> float:
    """``min(delta * gap, q**d / 2)`` with ``delta = delta_threshold(q, d)``.

    A uniform lower bound on ``-beta_y`` for the killed generator.
    """
    if not 0 < q < 1:
        raise ValidationError("q must lie in (0, 1)")
    if gap <= 0:
        raise ValidationError("gap must be positive")
    return min(delta_threshold(q, d) * gap, q ** d / 2.0)


@dataclass
class FeynmanKacResult:
    site: tuple[int, ...]
    beta: float
    c0: float
    delta: float
    gap: float
    method: str
    residual: float
    checks: list = field(default_factory=list)

    def to_record(self, model: Model, runtime: float = 0.0) -> dict:
        rec = _record(model, "beta_y", self.beta, self.method, self.residual, runtime)
        rec.update(site=list(self.site), c0=self.c0, delta=self.delta, gap=self.gap)
        return rec


def killed_generator(generator: GeneratorMatrix, y: int) -> sp.csr_matrix:
    """``H = Q - diag(c_y)`` on the generator's region."""
    model = generator.model
    bitpos = {s: j for j, s in enumerate(generator.sites)}
    ids = np.arange(generator.n_states, dtype=np.int64)
    blocked = np.zeros(generator.n_states, dtype=bool)
    for z in model.neighborhood(y):
        blocked |= ((ids >> bitpos[z]) & 1).astype(bool)
    V = (~blocked).astype(float)
    return (generator.Q - sp.diags(V)).tocsr()


def feynman_kac_expectation(generator: GeneratorMatrix, y: int, t: float,
                            tol: float = UNIFORMIZATION_TOL) -> float:
    """``E_pi[exp(-|G(y, t)|)] = <1, exp(tH) 1>_pi`` by uniformization."""
    H = killed_generator(generator, y)
    return float(uniformize(generator.pi, H, t, tol).sum())


def feynman_kac_beta(model: Model, y, test_times: Sequence[float] = (1.0, 5.0, 10.0),
                     cap: int = DEFAULT_STATE_CAP, method: Optional[str] = None) -> FeynmanKacResult:
    """Top of the spectrum of ``H = Q - c_y`` plus the analytic comparison.

    ``c0`` uses the spectral gap of the same finite box.  For each test time
    the record ``(t, <1, e^{tH} 1>_pi, e^{t beta})`` is stored in ``checks``.
    """
    k = model.geometry.index(y) if not isinstance(y, (int, np.integer)) else int(y)
    gen = build_generator(model, cap=cap)
    method = _choose_method(gen.n_states, method)
    s = np.sqrt(gen.pi)
    H = killed_generator(gen, k)
    Hs = sp.diags(s) @ H @ sp.diags(1.0 / s)
    Hs = ((Hs + Hs.T) * 0.5).tocsr()
    if method == "dense" or gen.n_states <= 3:
        w, v = scipy.linalg.eigh(Hs.toarray())
        beta, vec = float(w[-1]), v[:, -1]
    else:
        w, v = spla.eigsh(Hs, k=1, which="LA", tol=1e-13, maxiter=100000)
        beta, vec = float(w[0]), v[:, 0]
    residual = float(np.linalg.norm(Hs @ vec - beta * vec))
    gap = spectral_gap(gen).gap if gen.n_states > 1 else 1.0
    c0 = analytic_c0(model.q, model.geometry.d, gap)
    checks = [(float(t), feynman_kac_expectation(gen, k, t), math.exp(t * beta)) for t in test_times]
    for t, val, bound in checks:
        if val > bound * (1 + 1e-8):
            log.warning("Feynman-Kac bound violated at t=%g: %.12g > %.12g", t, val, bound)
    return FeynmanKacResult(model.geometry.coord(k), beta, c0, delta_threshold(model.q, model.geometry.d),
                            gap, method, residual, checks)


def lsi_upper_bound(model: Model, cap: int = DEFAULT_STATE_CAP) -> float:
    """``D(f) / Ent_pi(f^2)`` for ``f`` the indicator of the all-ones state.

    Any test function gives an upper bound on the log-Sobolev constant.
    """
    gen = build_generator(model, cap=cap)
    f = np.zeros(gen.n_states)
    f[-1] = 1.0
    dirichlet = gen.dirichlet_form(f)
    f2 = f * f
    mean = float(np.dot(gen.pi, f2))
    with np.errstate(divide="ignore", invalid="ignore"):
        flogf = np.where(f2 > 0, f2 * np.log(np.where(f2 > 0, f2, 1.0)), 0.0)
    ent = float(np.dot(gen.pi, flogf)) - mean * math.log(mean)
    return dirichlet / ent


def timed(fn, *args, **kwargs):
    """``(result, seconds)``; used by the CLI for JSON records."""
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0
