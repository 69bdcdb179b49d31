"""Lattice geometry, oriented constraint families and the constraint indicator.

Sites of the box ``[1, n]^d`` are indexed lexicographically with the first
coordinate most significant::

    index(x) = sum_j (x_j - 1) * n**(d - j)

so ``x_* = (1, ..., 1)`` has index 0 and ``x^* = (n, ..., n)`` has index
``n**d - 1``.  Bit ``k`` of an exact-state id is the spin at site ``k``.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import RangeError, ValidationError

FAMILIES = ("northeast", "maximal", "custom")


@dataclass(frozen=True)
class LatticeGeometry:
    """The box ``Lambda_n = [1, n]^d`` with its level structure."""

    d: int
    n: int
    coords: np.ndarray = field(init=False, repr=False, compare=False)
    levels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError(f"dimension must be an integer >= 1, got {self.d!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"side length must be an integer >= 1, got {self.n!r}")
        grid = np.array(list(itertools.product(range(1, self.n + 1), repeat=self.d)),
                        dtype=np.int64).reshape(-1, self.d)
        grid.setflags(write=False)
        lv = grid.sum(axis=1)
        lv.setflags(write=False)
        object.__setattr__(self, "coords", grid)
        object.__setattr__(self, "levels", lv)

    @property
    def n_sites(self) -> int:
        return self.n ** self.d

    @property
    def min_level(self) -> int:
        return self.d

    @property
    def max_level(self) -> int:
        return self.d * self.n

    @property
    def origin(self) -> int:
        """Index of the unconstrained corner ``x_* = (1, ..., 1)``."""
        return 0

    @property
    def far_corner(self) -> int:
        """Index of ``x^* = (n, ..., n)``."""
        return self.n_sites - 1

    def index(self, x: Sequence[int]) -> int:
        x = tuple(int(v) for v in x)
        if len(x) != self.d or any(v < 1 or v > self.n for v in x):
            raise ValidationError(f"{x} is not a site of the {self.d}-d box of side {self.n}")
        idx = 0
        for v in x:
            idx = idx * self.n + (v - 1)
        return idx

    def coord(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.n_sites:
            raise ValidationError(f"site index {index} out of range")
        return tuple(int(v) for v in self.coords[index])

    def contains(self, x: Sequence[int]) -> bool:
        return len(x) == self.d and all(1 <= v <= self.n for v in x)

    def _check_level(self, i: int) -> None:
        if not self.min_level <= i <= self.max_level:
            raise RangeError(f"level {i} outside [{self.min_level}, {self.max_level}]")

    def hyperplane(self, i: int) -> np.ndarray:
        """Indices of ``H_i = {x : sum_j x_j = i}``, sorted."""
        self._check_level(i)
        return np.flatnonzero(self.levels == i)

    def lower_set(self, i: int) -> np.ndarray:
        """Indices of ``U_i = {x : sum_j x_j <= i}``, sorted."""
        self._check_level(i)
        return np.flatnonzero(self.levels <= i)


def hyperplane(geometry: LatticeGeometry, i: int) -> list[tuple[int, ...]]:
    """Coordinates of the level-``i`` hyperplane, sorted by site index."""
    return [geometry.coord(k) for k in geometry.hyperplane(i)]


def maximal_neighborhood(geometry: LatticeGeometry, x: Sequence[int]) -> list[tuple[int, ...]]:
    """``K_x^* intersected with Lambda_n`` as coordinates sorted by index."""
    out = []
    for alpha in itertools.product((0, 1), repeat=geometry.d):
        if not any(alpha):
            continue
        y = tuple(a - b for a, b in zip(x, alpha))
        if geometry.contains(y):
            out.append(y)
    return sorted(out, key=geometry.index)


def _northeast_neighborhood(geometry, x):
    out = []
    for j in range(geometry.d):
        y = list(x)
        y[j] -= 1
        if geometry.contains(y):
            out.append(tuple(y))
    return sorted(out, key=geometry.index)


@dataclass(frozen=True)
class ConstraintFamily:
    """Per-site constraining neighbourhoods ``C_x`` stored as index tuples."""

    kind: str
    neighborhoods: tuple[tuple[int, ...], ...]

    @classmethod
    def northeast(cls, geometry: LatticeGeometry) -> "ConstraintFamily":
        nb = tuple(tuple(geometry.index(y) for y in _northeast_neighborhood(geometry, geometry.coord(k)))
                   for k in range(geometry.n_sites))
        return cls("northeast", nb)

    @classmethod
    def maximal(cls, geometry: LatticeGeometry) -> "ConstraintFamily":
        nb = tuple(tuple(geometry.index(y) for y in maximal_neighborhood(geometry, geometry.coord(k)))
                   for k in range(geometry.n_sites))
        return cls("maximal", nb)

    @classmethod
    def custom(cls, geometry: LatticeGeometry,
               mapping: Mapping[Sequence[int], Iterable[Sequence[int]]]) -> "ConstraintFamily":
        """Build from ``{site coords: [constraining site coords, ...]}``.

        Sites absent from ``mapping`` get an empty neighbourhood, which is
        only legal for ``x_*``; validation runs immediately.
        """
        nb: list[tuple[int, ...]] = [() for _ in range(geometry.n_sites)]
        for x, ys in mapping.items():
            k = geometry.index(x)
            idx = []
            for y in ys:
                if not geometry.contains(y):
                    raise ValidationError(f"constraint site {tuple(y)} of {tuple(x)} lies outside the box")
                idx.append(geometry.index(y))
            nb[k] = tuple(sorted(set(idx)))
        fam = cls("custom", tuple(nb))
        fam.validate(geometry)
        return fam

    def validate(self, geometry: LatticeGeometry) -> None:
        if self.kind not in FAMILIES:
            raise ValidationError(f"unknown constraint family {self.kind!r}")
        if len(self.neighborhoods) != geometry.n_sites:
            raise ValidationError("one neighbourhood per site is required")
        for k, cx in enumerate(self.neighborhoods):
            x = geometry.coord(k)
            if k == geometry.origin:
                if cx:
                    raise ValidationError(f"the corner {x} must be unconstrained")
                continue
            if not cx:
                raise ValidationError(f"site {x} has an empty constraining neighbourhood")
            allowed = {geometry.index(y) for y in maximal_neighborhood(geometry, x)}
            bad = [geometry.coord(y) for y in cx if y not in allowed]
            if bad:
                raise ValidationError(f"C_{x} contains {bad}, outside K*_x")

    def to_mapping(self, geometry: LatticeGeometry) -> dict[str, list[list[int]]]:
        """JSON-friendly form ``{"x1,...,xd": [[y1, ..., yd], ...]}``."""
        return {",".join(map(str, geometry.coord(k))): [list(geometry.coord(y)) for y in cx]
                for k, cx in enumerate(self.neighborhoods) if cx}


def _parse_site_key(key) -> tuple[int, ...]:
    if isinstance(key, str):
        return tuple(int(v) for v in key.replace("(", "").replace(")", "").split(","))
    return tuple(int(v) for v in key)


@dataclass(frozen=True)
class Model:
    """One oriented KCM instance: geometry, constraints and density ``p``."""

    geometry: LatticeGeometry
    constraints: ConstraintFamily
    p: float
    q: float = field(init=False)
    indptr: np.ndarray = field(init=False, repr=False, compare=False)
    indices: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise ValidationError(f"p must lie in (0, 1), got {self.p!r}")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "q", 1.0 - self.p)
        self.constraints.validate(self.geometry)
        lengths = np.array([len(c) for c in self.constraints.neighborhoods], dtype=np.int64)
        indptr = np.zeros(self.geometry.n_sites + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = np.array([y for c in self.constraints.neighborhoods for y in c], dtype=np.int64)
        for a in (indptr, indices):
            a.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def build(cls, d: int, n: int, p: float, family: str = "northeast", custom=None) -> "Model":
        geo = LatticeGeometry(d, n)
        if family == "northeast":
            fam = ConstraintFamily.northeast(geo)
        elif family == "maximal":
            fam = ConstraintFamily.maximal(geo)
        elif family == "custom":
            if custom is None:
                raise ValidationError("the custom family needs an explicit constraint map")
            fam = ConstraintFamily.custom(geo, {_parse_site_key(k): [tuple(y) for y in v]
                                                for k, v in custom.items()})
        else:
            raise ValidationError(f"unknown constraint family {family!r}")
        return cls(geo, fam, p)

    @classmethod
    def from_config(cls, block: Mapping) -> "Model":
        allowed = {"d", "n", "p", "model", "family", "constraints"}
        unknown = set(block) - allowed
        if unknown:
            raise ValidationError(f"unknown model keys: {sorted(unknown)}")
        family = block.get("model", block.get("family", "northeast"))
        try:
            return cls.build(int(block["d"]), int(block["n"]), float(block["p"]),
                             family, block.get("constraints"))
        except KeyError as exc:
            raise ValidationError(f"model block is missing {exc}") from None

    def to_config(self) -> dict:
        out = {"d": self.geometry.d, "n": self.geometry.n, "p": self.p, "model": self.constraints.kind}
        if self.constraints.kind == "custom":
            out["constraints"] = self.constraints.to_mapping(self.geometry)
        return out

    def model_hash(self) -> str:
        """Short content hash identifying this model in study outputs."""
        blob = json.dumps({"model": self.to_config(),
                           "nb": self.constraints.neighborhoods}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def n_sites(self) -> int:
        return self.geometry.n_sites

    def neighborhood(self, k: int) -> tuple[int, ...]:
        return self.constraints.neighborhoods[k]


def _site_index(model: Model, x) -> int:
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < model.n_sites:
            raise ValidationError(f"site index {x} out of range")
        return int(x)
    return model.geometry.index(x)


def constraining_neighborhood(model: Model, x) -> list[tuple[int, ...]]:
    """``C_x`` as coordinates sorted by site index; empty only for ``x_*``."""
    k = _site_index(model, x)
    return [model.geometry.coord(y) for y in model.neighborhood(k)]


def constraint_satisfied(model: Model, config: np.ndarray, x) -> int:
    """The indicator ``c_x(config) = prod_{y in C_x} (1 - config_y)``."""
    k = _site_index(model, x)
    cx = model.neighborhood(k)
    if not cx:
        return 1
    return int(not np.any(np.asarray(config)[list(cx)]))


def constraint_vector(model: Model, config: np.ndarray) -> np.ndarray:
    """``c_x(config)`` for every site at once (uint8 array)."""
    config = np.asarray(config)
    ones = np.concatenate([[0], np.cumsum(config[model.indices].astype(np.int64))])
    blocked = ones[model.indptr[1:]] - ones[model.indptr[:-1]]
    return (blocked == 0).astype(np.uint8)


def is_lower_closed(model: Model, region: Iterable[int]) -> bool:
    """True when every constraint of a region site refers only to region sites."""
    members = set(int(k) for k in region)
    return all(set(model.neighborhood(k)) <= members for k in members)
