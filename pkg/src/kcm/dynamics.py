"""Graphical construction: seeded Poisson clocks, event-driven trajectories,
hitting times, legal-time sets and influence regions.

Every site ``x`` owns a counter-based substream keyed by
``(master seed, x_1, ..., x_d)``.  Its ring times are cumulative
Exponential(1) draws and its coins Bernoulli(p) draws, so a site behaves
identically whatever region it is simulated in.  Rings are processed in
global time order through a binary heap; simultaneous rings (a floating
point accident) are broken by ascending site index and counted.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numba
import numpy as np

from . import _kernels
from .errors import RangeError, ValidationError
from .lattice import Model, is_lower_closed

log = logging.getLogger(__name__)

MAX_HORIZON = 2.0 ** 40
KEYINGS = ("coordinates", "enumeration")


def set_threads(threads: Optional[int]) -> None:
    """Set the replica-level thread count (``None`` keeps the default)."""
    if threads is not None:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


@dataclass(frozen=True)
class RandomnessStream:
    """Master seed of a graphical construction.

    ``keying="enumeration"`` keys substreams by position inside the
    simulated region instead of by coordinates.  It exists only as a broken
    negative control for the consistency check.
    """

    seed: int
    keying: str = "coordinates"

    def __post_init__(self):
        if self.keying not in KEYINGS:
            raise ValidationError(f"unknown keying {self.keying!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    def site_keys(self, model: Model, region: np.ndarray) -> np.ndarray:
        coords = model.geometry.coords
        if self.keying == "coordinates":
            return _kernels.site_keys(np.uint64(self.seed), coords)
        keys = np.zeros(model.n_sites, dtype=np.uint64)
        fake = np.zeros((len(region), model.geometry.d), dtype=np.int64)
        fake[:, 0] = np.arange(1, len(region) + 1)
        keys[region] = _kernels.site_keys(np.uint64(self.seed), fake)
        return keys

    def replica(self, r: int) -> "RandomnessStream":
        """Independent stream for replica ``r``."""
        return RandomnessStream(int(_kernels.replica_seed(np.uint64(self.seed), r)), self.keying)


@dataclass
class EventLog:
    """Every ring processed by one trajectory, in global time order."""

    times: np.ndarray
    sites: np.ndarray
    constraint: np.ndarray
    coin: np.ndarray
    applied: np.ndarray
    region: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    horizon: float
    ties: int = 0

    def __len__(self) -> int:
        return self.times.size

    def filtered(self, sites: Iterable[int]) -> "EventLog":
        keep = np.isin(self.sites, np.fromiter(sites, dtype=np.int64))
        sub = np.array(sorted(set(int(s) for s in sites)), dtype=np.int64)
        return EventLog(self.times[keep], self.sites[keep], self.constraint[keep],
                        self.coin[keep], self.applied[keep], sub,
                        self.initial, self.final, self.horizon, self.ties)

    def same_records(self, other: "EventLog") -> bool:
        return (len(self) == len(other)
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.sites, other.sites)
                and np.array_equal(self.constraint, other.constraint)
                and np.array_equal(self.coin, other.coin)
                and np.array_equal(self.applied, other.applied))

    def replay(self) -> np.ndarray:
        """Initial configuration with all applied events written in order."""
        state = self.initial.copy()
        mask = self.applied.astype(bool)
        for x, s in zip(self.sites[mask], self.coin[mask]):
            state[x] = s
        return state

    def to_csv(self, path, model: Model) -> None:
        d = model.geometry.d
        coords = model.geometry.coords
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"site_x{j + 1}" for j in range(d)] + ["constraint", "coin", "applied"])
            for t, x, c, s, a in zip(self.times, self.sites, self.constraint, self.coin, self.applied):
                w.writerow([repr(float(t))] + [int(v) for v in coords[x]] + [int(c), int(s), int(a)])


def _as_region(model: Model, region) -> np.ndarray:
    if region is None:
        return np.arange(model.n_sites, dtype=np.int64)
    reg = np.unique(np.asarray(list(region), dtype=np.int64))
    if reg.size and (reg[0] < 0 or reg[-1] >= model.n_sites):
        raise ValidationError("region contains invalid site indices")
    if not is_lower_closed(model, reg):
        raise ValidationError("region is not closed under the constraint family")
    return reg


def _as_state(model: Model, region: np.ndarray, initial) -> np.ndarray:
    state = np.zeros(model.n_sites, dtype=np.uint8)
    init = np.asarray(initial, dtype=np.uint8)
    if init.size == model.n_sites:
        state[region] = init[region]
    elif init.size == region.size:
        state[region] = init
    else:
        raise ValidationError("initial configuration has the wrong length")
    if np.any(state > 1):
        raise ValidationError("spins must be 0 or 1")
    return state


def _check_horizon(horizon: float) -> float:
    horizon = float(horizon)
    if not 0 <= horizon <= MAX_HORIZON:
        raise RangeError(f"horizon must lie in [0, 2^40], got {horizon}")
    return horizon


def _warn_ties(ties: int) -> None:
    if ties:
        log.warning("%d simultaneous ring times broken by site index", ties)


def simulate(model: Model, region, initial, horizon: float, stream: RandomnessStream,
             flip_on_change: bool = True) -> EventLog:
    """Run the graphical construction on ``region`` up to ``horizon``.

    ``region`` is ``None`` for the whole box or any set of site indices
    closed under the constraints (e.g. a lower set ``U_i``).  ``initial``
    is given either on the whole box or on the region (in region order).
    """
    horizon = _check_horizon(horizon)
    reg = _as_region(model, region)
    state = _as_state(model, reg, initial)
    init = state.copy()
    keys = stream.site_keys(model, reg)
    t, s, c, coin, app, _, _, _, ties = _kernels.run(
        keys, reg, model.indptr, model.indices, model.p, state, horizon, True,
        -1, -1, 0, flip_on_change)
    _warn_ties(ties)
    return EventLog(t, s, c, coin, app, reg, init, state, horizon, int(ties))


def restricted_consistency_check(model: Model, i: int, initial, horizon: float,
                                 stream: RandomnessStream,
                                 restricted_stream: Optional[RandomnessStream] = None) -> bool:
    """Compare the full-box trajectory, filtered to ``U_i``, with the
    trajectory of the process run on ``U_i`` alone.

    ``restricted_stream`` defaults to ``stream``; passing a differently
    keyed stream is how the negative control breaks the coupling.
    """
    lower = model.geometry.lower_set(i)
    full = simulate(model, None, initial, horizon, stream)
    part = simulate(model, lower, np.asarray(initial)[lower] if np.size(initial) == model.n_sites
                    else initial, horizon, restricted_stream or stream)
    return full.filtered(lower).same_records(part)


def hitting_time_tau_star(model: Model, stream: RandomnessStream, cap: float,
                          initial=None) -> float:
    """First time the far corner ``(n, ..., n)`` holds a 0, ``inf`` past ``cap``.

    Starts from all ones unless ``initial`` is given.
    """
    cap = _check_horizon(cap)
    reg = np.arange(model.n_sites, dtype=np.int64)
    init = np.ones(model.n_sites, dtype=np.uint8) if initial is None else initial
    state = _as_state(model, reg, init)
    keys = stream.site_keys(model, reg)
    res = _kernels.run(keys, reg, model.indptr, model.indices, model.p, state, cap, False,
                       -1, model.geometry.far_corner, 0, True)
    _warn_ties(res[8])
    return float(res[7])


def _site(model: Model, y) -> int:
    if isinstance(y, (int, np.integer)):
        return int(y)
    return model.geometry.index(y)


def legal_time_measure(model: Model, y, horizon: float, stream: RandomnessStream,
                       initial=None) -> float:
    """Lebesgue measure of ``{s < horizon : c_y(sigma(s)) = 1}``.

    With ``initial=None`` the start is a pi-sample drawn from ``stream``.
    """
    horizon = _check_horizon(horizon)
    reg = np.arange(model.n_sites, dtype=np.int64)
    keys = stream.site_keys(model, reg)
    if initial is None:
        state = np.zeros(model.n_sites, dtype=np.uint8)
        _kernels.sample_product(keys, reg, model.p, state)
    else:
        state = _as_state(model, reg, initial)
    res = _kernels.run(keys, reg, model.indptr, model.indices, model.p, state, horizon, False,
                       _site(model, y), -1, 0, True)
    return float(res[6])


@dataclass
class InfluenceRegion:
    """First-flip time of every site; ``R_t`` are the sites flipped by ``t``."""

    first_flip: np.ndarray
    shape: tuple[int, ...]
    horizon: float
    snapshots: dict = field(default_factory=dict)

    def mask_at(self, t: float) -> np.ndarray:
        """Boolean lattice array (axis ``j`` is coordinate ``x_{j+1} - 1``)."""
        return (self.first_flip <= t).reshape(self.shape)

    def sites_at(self, t: float) -> np.ndarray:
        return np.flatnonzero(self.first_flip <= t)

    def to_csv(self, path, model: Model) -> None:
        coords = model.geometry.coords
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(model.geometry.d)] + ["first_flip_time"])
            for k, t in enumerate(self.first_flip):
                w.writerow([int(v) for v in coords[k]] + [repr(float(t)) if np.isfinite(t) else "inf"])


def scaled_profile(mask: np.ndarray, t: float) -> np.ndarray:
    """Cell centres of the unit squares of ``R_t`` scaled by ``1/t``.

    Site ``(x_1, ..., x_d)`` owns the cube ``[x - 1, x]``; returned points
    are ``(x - 1/2) / t``.
    """
    pts = np.argwhere(mask).astype(float) + 0.5
    return pts / t


def influence_region(model: Model, stream: RandomnessStream, horizon: float,
                     snapshots: Sequence[float] = (), flip_on_change: bool = True) -> InfluenceRegion:
    """First-flip times from the all-ones start plus ``R_t`` extracts.

    A site's unit cube joins ``R_t`` only after its first flip; with
    ``flip_on_change=False`` any legal ring counts as a flip.
    """
    horizon = _check_horizon(horizon)
    for t in snapshots:
        if not 0 <= t <= horizon:
            raise RangeError(f"snapshot {t} outside [0, {horizon}]")
    reg = np.arange(model.n_sites, dtype=np.int64)
    state = np.ones(model.n_sites, dtype=np.uint8)
    keys = stream.site_keys(model, reg)
    res = _kernels.run(keys, reg, model.indptr, model.indices, model.p, state, horizon, False,
                       -1, -1, 0, flip_on_change)
    _warn_ties(res[8])
    shape = (model.geometry.n,) * model.geometry.d
    out = InfluenceRegion(res[5], shape, horizon)
    out.snapshots = {float(t): out.mask_at(t) for t in snapshots}
    return out


# Replica batches.  Replica r uses RandomnessStream(seed).replica(r).

def hitting_time_samples(model: Model, seed: int, replicas: int, cap: float,
                         initial=None) -> np.ndarray:
    reg = np.arange(model.n_sites, dtype=np.int64)
    init = np.ones(model.n_sites, dtype=np.uint8) if initial is None else _as_state(model, reg, initial)
    return _kernels.batch_hitting_times(np.uint64(seed), int(replicas), model.geometry.coords, reg,
                                        model.indptr, model.indices, model.p, init,
                                        _check_horizon(cap), model.geometry.far_corner, 0)


def final_state_samples(model: Model, seed: int, replicas: int, initial, horizon: float,
                        region=None) -> np.ndarray:
    """State ids (region bit order) at ``horizon`` over independent replicas."""
    reg = _as_region(model, region)
    init = _as_state(model, reg, initial)
    return _kernels.batch_final_states(np.uint64(seed), int(replicas), model.geometry.coords, reg,
                                       model.indptr, model.indices, model.p, init,
                                       _check_horizon(horizon))


def legal_time_samples(model: Model, y, seed: int, replicas: int, horizon: float) -> np.ndarray:
    reg = np.arange(model.n_sites, dtype=np.int64)
    return _kernels.batch_legal_times(np.uint64(seed), int(replicas), model.geometry.coords, reg,
                                      model.indptr, model.indices, model.p, _site(model, y),
                                      _check_horizon(horizon))


def first_flip_samples(model: Model, seed: int, replicas: int, horizon: float,
                       flip_on_change: bool = True) -> np.ndarray:
    reg = np.arange(model.n_sites, dtype=np.int64)
    init = np.ones(model.n_sites, dtype=np.uint8)
    return _kernels.batch_first_flips(np.uint64(seed), int(replicas), model.geometry.coords, reg,
                                      model.indptr, model.indices, model.p, init,
                                      _check_horizon(horizon), flip_on_change)


def ring_count_samples(model: Model, y, seed: int, replicas: int, horizon: float) -> np.ndarray:
    return _kernels.batch_ring_counts(np.uint64(seed), int(replicas), model.geometry.coords,
                                      _site(model, y), _check_horizon(horizon))
