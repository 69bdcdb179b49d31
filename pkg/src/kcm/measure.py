"""Spin configurations, the product Bernoulli measure and distribution vectors.

A configuration on a region (a sorted tuple of global site indices) is
identified with the integer whose bit ``k`` is the spin of the ``k``-th
region site.  On the full box this is bit ``k`` = spin at site ``k``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CapacityError, DimensionError, ValidationError
from .lattice import Model

log = logging.getLogger(__name__)

DEFAULT_STATE_CAP = 2 ** 24
NORMALIZATION_TOL = 1e-12
DRIFT_TOL = 1e-9


def check_capacity(n_sites: int, cap: int = DEFAULT_STATE_CAP) -> int:
    """Return ``2**n_sites`` or raise :class:`CapacityError` above ``cap``."""
    size = 1 << int(n_sites)
    if size > cap:
        raise CapacityError(f"exact state space 2^{n_sites} = {size} exceeds the cap {cap}")
    return size


def config_to_id(bits: Sequence[int]) -> int:
    out = 0
    for k, b in enumerate(bits):
        if b:
            out |= 1 << k
    return out


def id_to_config(state: int, n_sites: int) -> np.ndarray:
    return ((int(state) >> np.arange(n_sites)) & 1).astype(np.uint8)


def state_bits(n_sites: int, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """All configurations as a ``(2**n_sites, n_sites)`` uint8 matrix."""
    size = check_capacity(n_sites, cap)
    ids = np.arange(size, dtype=np.int64)
    return ((ids[:, None] >> np.arange(n_sites)) & 1).astype(np.uint8)


def _ones_count(n_sites: int, cap: int) -> np.ndarray:
    size = check_capacity(n_sites, cap)
    ids = np.arange(size, dtype=np.int64)
    ones = np.zeros(size, dtype=np.int64)
    for k in range(n_sites):
        ones += (ids >> k) & 1
    return ones


def pi_weight(model: Model, config: Sequence[int]) -> float:
    """``p**(#ones) * q**(#zeros)``."""
    config = np.asarray(config)
    k = int(config.sum())
    return model.p ** k * model.q ** (config.size - k)


@dataclass(frozen=True)
class DistributionVector:
    """A probability vector over ``{0,1}^region``.

    ``sites`` is the sorted tuple of global site indices spanning the
    region; ``label`` is a free-form name (``"full"``, ``"U_4"``, ...).
    """

    weights: np.ndarray
    sites: tuple[int, ...]
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (1 << len(self.sites),):
            raise DimensionError(f"{w.shape[0]} weights do not match a region of {len(self.sites)} sites")
        if np.any(w < 0):
            raise ValidationError("distribution has negative entries")
        if abs(w.sum() - 1.0) > NORMALIZATION_TOL * max(1, w.size) ** 0.5 + NORMALIZATION_TOL:
            raise ValidationError(f"distribution sums to {w.sum()!r}")
        if tuple(sorted(self.sites)) != tuple(self.sites):
            raise ValidationError("region sites must be sorted")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_states(self) -> int:
        return self.weights.size

    @classmethod
    def point_mass(cls, sites: Sequence[int], config: Sequence[int], label: str = "") -> "DistributionVector":
        w = np.zeros(1 << len(sites))
        w[config_to_id(config)] = 1.0
        return cls(w, tuple(sites), label)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state_id", "weight"])
            for s, w in enumerate(self.weights):
                writer.writerow([s, repr(float(w))])


def renormalize(weights: np.ndarray, what: str = "distribution") -> np.ndarray:
    """Clip round-off negatives and rescale to unit mass, logging the drift."""
    w = np.clip(weights, 0.0, None)
    total = w.sum()
    drift = abs(total - 1.0)
    if drift > DRIFT_TOL:
        log.warning("%s mass drifted by %.3e before renormalisation", what, drift)
    elif drift > 0:
        log.debug("%s mass drift %.3e", what, drift)
    return w / total


def _region(model: Model, region) -> tuple[int, ...]:
    if region is None:
        return tuple(range(model.n_sites))
    sites = tuple(sorted(int(k) for k in region))
    if len(set(sites)) != len(sites) or (sites and not 0 <= sites[0] <= sites[-1] < model.n_sites):
        raise ValidationError("region must be a set of valid site indices")
    return sites


def product_weights(model: Model, n_sites: int, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    ones = _ones_count(n_sites, cap)
    return model.p ** ones * model.q ** (n_sites - ones)


def product_distribution(model: Model, region: Optional[Iterable[int]] = None,
                         cap: int = DEFAULT_STATE_CAP, label: str = "") -> DistributionVector:
    """``pi`` restricted to ``region`` (the full box when ``region`` is None)."""
    sites = _region(model, region)
    w = product_weights(model, len(sites), cap)
    return DistributionVector(w / w.sum(), sites, label or ("full" if region is None else "region"))


def marginal_on(dist: DistributionVector, region: Iterable[int], label: str = "") -> DistributionVector:
    """Sum out every spin of ``dist`` outside ``region``."""
    sub = tuple(sorted(int(k) for k in region))
    pos = {s: j for j, s in enumerate(dist.sites)}
    try:
        bit_positions = [pos[s] for s in sub]
    except KeyError:
        raise DimensionError("target region is not contained in the distribution's region") from None
    ids = np.arange(dist.n_states, dtype=np.int64)
    new = np.zeros(dist.n_states, dtype=np.int64)
    for j, b in enumerate(bit_positions):
        new |= ((ids >> b) & 1) << j
    w = np.bincount(new, weights=dist.weights, minlength=1 << len(sub))
    return DistributionVector(w / w.sum(), sub, label)


def tv_distance(a, b) -> float:
    """``(1/2) * sum |a - b|`` for two vectors on the same state space."""
    wa = a.weights if isinstance(a, DistributionVector) else np.asarray(a, dtype=float)
    wb = b.weights if isinstance(b, DistributionVector) else np.asarray(b, dtype=float)
    if isinstance(a, DistributionVector) and isinstance(b, DistributionVector) and a.sites != b.sites:
        raise DimensionError("distributions live on different regions")
    if wa.shape != wb.shape:
        raise DimensionError(f"shape mismatch {wa.shape} vs {wb.shape}")
    return 0.5 * float(np.abs(wa - wb).sum())


def chi_square_distance(dist, model: Model, cap: int = DEFAULT_STATE_CAP) -> float:
    """``Var_pi(dist / pi) = sum dist**2 / pi - 1`` on the distribution's region."""
    w = dist.weights if isinstance(dist, DistributionVector) else np.asarray(dist, dtype=float)
    n_sites = int(w.size).bit_length() - 1
    if 1 << n_sites != w.size:
        raise DimensionError("vector length is not a power of two")
    pi = product_weights(model, n_sites, cap)
    return float(np.sum(w * w / pi) - 1.0)
