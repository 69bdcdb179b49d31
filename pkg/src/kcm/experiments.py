"""Scripted studies linking simulation and exact analysis.

Each study returns a :class:`StudyReport` whose content depends only on its
inputs (model, grids, master seed); wall-clock time is kept apart so the
saved artifacts regenerate bit-identically.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from . import dynamics, exact, results
from .errors import StudyFailure, ValidationError
from .lattice import Model
from .measure import DEFAULT_STATE_CAP, DistributionVector, tv_distance

log = logging.getLogger(__name__)

BOOTSTRAP_RESAMPLES = 1000


@dataclass
class Schedule:
    eps: float
    c: float
    deltas: np.ndarray
    times: np.ndarray
    budgets: np.ndarray
    integral_bound: float

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def within_integral_bound(self) -> bool:
        return self.final_time <= self.integral_bound


def mixing_schedule(n: int, eps: float, c: float) -> Schedule:
    """Iteration times ``t_i = t_{i-1} + log(i**3 / eps) / c`` for ``i < 2n``.

    ``budgets[i-1] = eps * sum_{j<=i} 1/j**2`` is the accumulated error, and
    ``integral_bound = (1/c) * int_0^{2n} log(x**3 / eps) dx``.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0 < eps < 1:
        raise ValidationError("eps must lie in (0, 1)")
    if c <= 0:
        raise ValidationError("c must be positive")
    i = np.arange(1, 2 * n, dtype=float)
    deltas = (3.0 * np.log(i) - math.log(eps)) / c
    times = np.cumsum(deltas)
    times[-1] = math.fsum(deltas)
    budgets = eps * np.cumsum(1.0 / i ** 2)
    L = 2.0 * n
    integral = (3.0 * (L * math.log(L) - L) - L * math.log(eps)) / c
    return Schedule(eps, c, deltas, times, budgets, integral)


@dataclass
class StudyReport:
    """Output of one study: grid, per-point rows, fitted constants."""

    name: str
    grid: dict
    points: list
    fits: dict = field(default_factory=dict)
    seed: Optional[int] = None
    model_hash: Optional[str] = None
    passed: Optional[bool] = None
    runtime: float = 0.0
    tables: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"study": self.name, "grid": self.grid, "points": self.points, "fits": self.fits,
                "seed": self.seed, "model_hash": self.model_hash, "passed": self.passed}

    def save(self, run_dir, meta: Optional[dict] = None) -> Path:
        """Write ``result.json``, ``points.csv``, extra tables and ``runtime.json``."""
        run_dir = Path(run_dir)
        meta = dict(meta or {})
        meta.setdefault("study", self.name)
        results.write_json(run_dir / "result.json", {"metadata": meta, **self.to_dict()})
        if self.points:
            header = list(self.points[0].keys())
            results.write_csv(run_dir / "points.csv", header,
                              ([pt.get(h) for h in header] for pt in self.points), meta)
        for name, (header, rows) in sorted(self.tables.items()):
            results.write_csv(run_dir / f"{name}.csv", header, rows, meta)
        results.write_json(run_dir / "runtime.json", {"runtime_seconds": self.runtime})
        return run_dir


def _linear_fit(x: np.ndarray, y: np.ndarray):
    A = np.vstack([x, np.ones_like(x)]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = a * x + b
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def fit_decay_rate(times: np.ndarray, distances: np.ndarray, t_min: float = 1.0,
                   floor: float = 1e-7) -> float:
    """Least-squares rate ``r`` in ``distance ~ A exp(-r t)``.

    Only points with ``t >= t_min`` and ``distance > floor`` are used; the
    floor keeps uniformization round-off out of the fit.
    """
    times = np.asarray(times, dtype=float)
    distances = np.asarray(distances, dtype=float)
    keep = (times >= t_min) & (distances > floor)
    if keep.sum() < 2:
        return float("nan")
    slope, _, _ = _linear_fit(times[keep], np.log(distances[keep]))
    return -slope


def diagonal_decay_study(model: Model, i: int, times: Sequence[float] = tuple(np.linspace(0, 20, 41)),
                         gap: Optional[float] = None, cap: int = DEFAULT_STATE_CAP) -> StudyReport:
    """Relaxation of the level-``i`` marginal when the levels below start at equilibrium.

    The initial law is ``pi`` on ``U_{i-1}`` times all ones on ``H_i``; it is
    evolved exactly on ``U_i`` (the dynamics there is autonomous) and the
    distance ``||nu_t^{(i)} - pi^{(i)}||_TV`` is recorded on ``times``.
    ``gap`` defaults to the spectral gap of the whole box and enters the
    analytic rate ``c0``.
    """
    t0 = time.perf_counter()
    geo = model.geometry
    lower = geo.lower_set(i)
    top = set(int(s) for s in geo.hyperplane(i))
    gen = exact.build_generator(model, lower, cap=cap)
    ids = np.arange(gen.n_states, dtype=np.int64)
    ones_mask = 0
    for j, s in enumerate(gen.sites):
        if s in top:
            ones_mask |= 1 << j
    below = [j for j, s in enumerate(gen.sites) if s not in top]
    w = np.where((ids & ones_mask) == ones_mask, 1.0, 0.0)
    for j in below:
        w *= np.where((ids >> j) & 1, model.p, model.q)
    nu = DistributionVector(w / w.sum(), gen.sites, f"U_{i}")
    pi_i = DistributionVector(gen.pi, gen.sites, f"U_{i}")
    if gap is None:
        gap = exact.spectral_gap(exact.build_generator(model, cap=cap)).gap
    c0 = exact.analytic_c0(model.q, geo.d, gap)
    times = np.asarray(sorted(set(float(t) for t in times)))
    points = []
    cur, t_prev = nu, 0.0
    for t in times:
        cur = exact.evolve_distribution(gen, cur, t - t_prev)
        t_prev = t
        dist = tv_distance(cur, pi_i)
        points.append({"t": float(t), "tv": dist,
                       "bound_i_d": 2.0 * i ** geo.d * math.exp(-c0 * t),
                       "bound_i_dm1": 2.0 * i ** (geo.d - 1) * math.exp(-c0 * t),
                       "seed": None, "model_hash": model.model_hash()})
    tv = np.array([pt["tv"] for pt in points])
    rate = fit_decay_rate(times, tv)
    late = times >= 1.0
    dominated = bool(np.all(tv[late] <= np.array([pt["bound_i_d"] for pt in points])[late]))
    dominated_alt = bool(np.all(tv[late] <= np.array([pt["bound_i_dm1"] for pt in points])[late]))
    monotone = bool(np.all(np.diff(tv) <= 1e-10))
    fits = {"decay_rate": rate, "c0": c0, "gap": gap, "delta": exact.delta_threshold(model.q, geo.d),
            "dominated_by_2_i^d": dominated, "dominated_by_2_i^(d-1)": dominated_alt,
            "nonincreasing": monotone}
    passed = dominated and monotone and rate >= c0
    return StudyReport("diagonal_decay", {"i": i, "times": times.tolist()}, points, fits,
                       model_hash=model.model_hash(), passed=passed,
                       runtime=time.perf_counter() - t0)


def derived_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit seed for a sub-task (e.g. one lattice size)."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1, np.uint64)[0])


def _bootstrap_fit(samples: list, ns: np.ndarray, seed: int, resamples: int):
    rng = np.random.default_rng(seed)
    slopes, intercepts = np.empty(resamples), np.empty(resamples)
    for b in range(resamples):
        means = np.array([rng.choice(s, size=s.size, replace=True).mean() for s in samples])
        slopes[b], intercepts[b], _ = _linear_fit(ns, means)
    return (np.percentile(slopes, [2.5, 97.5]).tolist(),
            np.percentile(intercepts, [2.5, 97.5]).tolist())


def tau_star_scaling(model_factory: Callable[[int], Model], n_list: Sequence[int], replicas: int,
                     seed: int, cap_factor: float = 50.0,
                     resamples: int = BOOTSTRAP_RESAMPLES) -> StudyReport:
    """Monte Carlo ``E[tau*]`` and ``P(tau* >= n/2)`` from all ones, per size.

    Aborts with :class:`StudyFailure` when more than 1% of the replicas of a
    size do not hit before ``cap_factor * n``.
    """
    t0 = time.perf_counter()
    points, samples = [], []
    ns = np.array(sorted(n_list), dtype=float)
    for n in ns.astype(int):
        model = model_factory(int(n))
        s = derived_seed(seed, n)
        tau = dynamics.hitting_time_samples(model, s, replicas, cap_factor * n)
        capped = int(np.isinf(tau).sum())
        if capped > 0.01 * replicas:
            raise StudyFailure(f"n={n}: {capped} of {replicas} replicas exceeded the cap {cap_factor * n}")
        finite = tau[np.isfinite(tau)]
        samples.append(finite)
        points.append({"n": int(n), "mean_tau": float(finite.mean()),
                       "sem": float(finite.std(ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else 0.0,
                       "p_tau_ge_half_n": float(np.mean(tau >= n / 2.0)),
                       "capped": capped, "replicas": int(replicas), "seed": s,
                       "model_hash": model.model_hash()})
    means = np.array([pt["mean_tau"] for pt in points])
    fits = {}
    if len(ns) >= 2:
        a, b, r2 = _linear_fit(ns, means)
        ci_a, ci_b = _bootstrap_fit(samples, ns, derived_seed(seed, 0), resamples)
        probs = [pt["p_tau_ge_half_n"] for pt in points]
        fits = {"slope": a, "intercept": b, "r2": r2, "slope_ci95": ci_a, "intercept_ci95": ci_b,
                "p_nondecreasing": bool(np.all(np.diff(probs) >= 0))}
    return StudyReport("tau_star_scaling", {"n": ns.astype(int).tolist(), "replicas": replicas,
                                            "cap_factor": cap_factor},
                       points, fits, seed=seed, runtime=time.perf_counter() - t0)


def mc_exact_validation(model: Model, t: float, replicas: int, seed: int, initial=None,
                        simulation_p: Optional[float] = None,
                        cap: int = DEFAULT_STATE_CAP) -> StudyReport:
    """Compare the empirical law at ``t`` with the uniformization vector.

    Passes iff TV <= ``max(0.01, 5 * sqrt(2**N / replicas))``.
    ``simulation_p`` runs the simulator at a different density (negative
    control).
    """
    t0 = time.perf_counter()
    init = np.ones(model.n_sites, dtype=np.uint8) if initial is None else np.asarray(initial, dtype=np.uint8)
    sim_model = model if simulation_p is None else Model(model.geometry, model.constraints, simulation_p)
    states = dynamics.final_state_samples(sim_model, seed, replicas, init, t)
    empirical = np.bincount(states, minlength=1 << model.n_sites) / replicas
    gen = exact.build_generator(model, cap=cap)
    start = DistributionVector.point_mass(gen.sites, init)
    exact_t = exact.evolve_distribution(gen, start, t)
    tv = tv_distance(empirical, exact_t.weights)
    tol = max(0.01, 5.0 * math.sqrt((1 << model.n_sites) / replicas))
    rows = [(s, empirical[s], exact_t.weights[s]) for s in range(empirical.size)]
    return StudyReport("mc_exact_validation", {"t": t, "replicas": replicas,
                                               "simulation_p": sim_model.p},
                       [{"tv": tv, "tolerance": tol, "seed": seed, "model_hash": model.model_hash()}],
                       {"tv": tv, "tolerance": tol}, seed=seed, model_hash=model.model_hash(),
                       passed=tv <= tol, runtime=time.perf_counter() - t0,
                       tables={"distribution": (["state_id", "empirical", "exact"], rows)})


def front_profile(mask: np.ndarray, t: float) -> np.ndarray:
    """Scaled height of ``R_t`` in each column: ``max{x_2 : (x_1, x_2) in R_t} / t``."""
    heights = np.where(mask.any(axis=1), mask.shape[1] - np.argmax(mask[:, ::-1], axis=1), 0)
    return heights / t


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0 or b.size == 0:
        return float("nan")
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def shape_study(model: Model, snapshots: Sequence[float], replicas: int, seed: int,
                flip_on_change: bool = True, resamples: int = BOOTSTRAP_RESAMPLES) -> StudyReport:
    """Exploratory look at ``R_t / t`` from the all-ones start (d = 2 only).

    Reports the mean and spread of the column-height profile of ``R_t / t``
    at each snapshot and the Hausdorff distance between successive scaled
    regions (cell centres), with a bootstrap interval.  No pass/fail.
    """
    if model.geometry.d != 2:
        raise ValidationError("the shape study is defined for d = 2")
    t0 = time.perf_counter()
    snaps = sorted(float(s) for s in snapshots)
    if not snaps or snaps[0] <= 0:
        raise ValidationError("snapshots must be positive")
    ff = dynamics.first_flip_samples(model, seed, replicas, snaps[-1], flip_on_change)
    n = model.geometry.n
    profiles = {t: [] for t in snaps}
    haus = {(a, b): [] for a, b in zip(snaps, snaps[1:])}
    monotone = True
    for r in range(replicas):
        masks = {t: (ff[r] <= t).reshape(n, n) for t in snaps}
        for a, b in zip(snaps, snaps[1:]):
            monotone &= bool(np.all(masks[b] | ~masks[a]))
            pa = np.argwhere(masks[a]) + 0.5
            pb = np.argwhere(masks[b]) + 0.5
            haus[(a, b)].append(hausdorff(pa / a, pb / b))
        for t in snaps:
            profiles[t].append(front_profile(masks[t], t))
    rng = np.random.default_rng(derived_seed(seed, 1))
    points = []
    for (a, b), vals in haus.items():
        v = np.array(vals)
        v = v[np.isfinite(v)]
        if v.size:
            boot = [rng.choice(v, size=v.size, replace=True).mean() for _ in range(resamples)]
            ci = np.percentile(boot, [2.5, 97.5]).tolist()
            mean = float(v.mean())
        else:
            ci, mean = [float("nan")] * 2, float("nan")
        points.append({"t_a": a, "t_b": b, "mean_hausdorff": mean, "ci_low": ci[0], "ci_high": ci[1],
                       "replicas_used": int(v.size), "seed": seed, "model_hash": model.model_hash()})
    rows = []
    for t in snaps:
        P = np.array(profiles[t])
        for col in range(n):
            rows.append((t, (col + 0.5) / t, float(P[:, col].mean()), float(P[:, col].std())))
    return StudyReport("shape", {"snapshots": snaps, "replicas": replicas, "n": n,
                                 "flip_on_change": flip_on_change},
                       points, {"monotone": monotone}, seed=seed, model_hash=model.model_hash(),
                       runtime=time.perf_counter() - t0,
                       tables={"profiles": (["t", "x1_scaled", "mean_height_scaled", "std_height_scaled"],
                                            rows)})


def mixing_growth(d: int, p: float, sizes: Sequence[int], family: str = "northeast",
                  mode: str = "tv", cap: int = DEFAULT_STATE_CAP) -> StudyReport:
    """Exact ``T_mix`` (or ``T_2``) across box sizes."""
    t0 = time.perf_counter()
    points = []
    for n in sizes:
        m = Model.build(d, n, p, family)
        res = exact.mixing_time_exact(m, mode=mode, cap=cap)
        points.append({"n": n, "value": res.time, "mode": mode, "seed": None,
                       "model_hash": m.model_hash()})
    vals = [pt["value"] for pt in points]
    return StudyReport("mixing_growth", {"d": d, "p": p, "n": list(sizes), "family": family},
                       points, {"increasing": bool(np.all(np.diff(vals) > 0))},
                       runtime=time.perf_counter() - t0)
