"""Domain types: box domains, KR parameters, discrete measures and extremal atoms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidAtomError(ValueError):
    """Raised for atoms violating their validity constraints."""


class InvalidParamsError(ValueError):
    """Raised for parameter sets violating their validity constraints."""


def _as_point(z) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(z, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"a point must be a scalar or 1-d vector, got shape {arr.shape}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box in R^n, n in {1, 2}."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", _as_point(self.lower))
        object.__setattr__(self, "upper", _as_point(self.upper))
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have the same dimension")
        if self.dim not in (1, 2):
            raise ValueError(f"only 1-d and 2-d box domains are supported, got n={self.dim}")
        if not all(lo < hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("domain requires lower[i] < upper[i] for every axis")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def diameter(self) -> float:
        return math.sqrt(sum((hi - lo) ** 2 for lo, hi in zip(self.lower, self.upper)))

    def contains(self, points, tol: float = 0.0) -> bool:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.upper) + tol
        return bool(np.all(pts >= lo) and np.all(pts <= hi))

    def clip(self, points) -> np.ndarray:
        """Componentwise projection onto the box."""
        return np.clip(np.asarray(points, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class KRParams:
    """Norm parameters: creation weight alpha, transport weight beta, cost exponent p."""

    alpha: float
    beta: float
    p: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidParamsError(f"alpha must be positive, got {self.alpha}")
        if not self.beta > 0:
            raise InvalidParamsError(f"beta must be positive, got {self.beta}")
        if not 0 < self.p <= 1:
            raise InvalidParamsError(f"p must lie in (0, 1], got {self.p}")
        if not 2 * self.alpha - self.beta > 0:
            raise InvalidParamsError(
                f"2*alpha - beta must be positive, got {2 * self.alpha - self.beta}"
            )

    @property
    def dipole_window(self) -> float:
        """Upper bound on |x-y|^p below which a dipole is extremal."""
        return 2 * self.alpha - self.beta


class DiscreteMeasure:
    """Finitely supported signed measure: locations (N, n) and signed weights (N,)."""

    __slots__ = ("locations", "weights")

    def __init__(self, locations, weights):
        locations = np.atleast_2d(np.asarray(locations, dtype=float))
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if locations.size == 0:
            locations = locations.reshape(0, max(1, locations.shape[-1] if locations.ndim else 1))
        if locations.shape[0] != weights.shape[0]:
            raise ValueError(
                f"{locations.shape[0]} locations but {weights.shape[0]} weights"
            )
        locations.setflags(write=False)
        weights.setflags(write=False)
        self.locations = locations
        self.weights = weights

    @classmethod
    def empty(cls, dim: int = 1) -> "DiscreteMeasure":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def from_atoms(cls, atoms) -> "DiscreteMeasure":
        """Build from an iterable of (location, weight) pairs."""
        atoms = list(atoms)
        if not atoms:
            return cls.empty()
        locs = [_as_point(loc) for loc, _ in atoms]
        return cls(np.array(locs), np.array([w for _, w in atoms], dtype=float))

    @property
    def num_atoms(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.num_atoms == 0

    def scale(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.locations, c * self.weights)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        if self.dim != other.dim:
            raise ValueError("cannot add measures of different dimension")
        return DiscreteMeasure(
            np.vstack([self.locations, other.locations]),
            np.concatenate([self.weights, other.weights]),
        )

    def __neg__(self) -> "DiscreteMeasure":
        return self.scale(-1.0)

    def allclose(self, other: "DiscreteMeasure", tol: float = 1e-12) -> bool:
        if self.num_atoms != other.num_atoms:
            return False
        if self.is_empty:
            return True
        return bool(
            np.allclose(self.locations, other.locations, atol=tol)
            and np.allclose(self.weights, other.weights, atol=tol)
        )

    def to_json_obj(self) -> list:
        return [
            {"x": [float(v) for v in loc], "w": float(w)}
            for loc, w in zip(self.locations, self.weights)
        ]

    @classmethod
    def from_json_obj(cls, obj) -> "DiscreteMeasure":
        return cls.from_atoms([(entry["x"], entry["w"]) for entry in obj])

    def __repr__(self):
        return f"DiscreteMeasure({self.num_atoms} atoms, dim={self.dim if not self.is_empty else '?'})"


@dataclass(frozen=True)
class DiracAtom:
    """Extremal atom sign * delta_z / alpha."""

    sign: int
    z: tuple[float, ...]

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise InvalidAtomError(f"Dirac sign must be +1 or -1, got {self.sign}")
        object.__setattr__(self, "z", _as_point(self.z))


@dataclass(frozen=True)
class DipoleAtom:
    """Extremal atom (delta_x - delta_y) / (beta + |x-y|^p)."""

    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", _as_point(self.x))
        object.__setattr__(self, "y", _as_point(self.y))
        if len(self.x) != len(self.y):
            raise InvalidAtomError("dipole endpoints must share a dimension")
        if self.x == self.y:
            raise InvalidAtomError("dipole endpoints must be distinct")

    @property
    def separation(self) -> float:
        return math.dist(self.x, self.y)


ExtremalAtom = DiracAtom | DipoleAtom


def validate_atom(atom: ExtremalAtom, params: KRParams) -> None:
    """Check extremality of an atom under the given parameters."""
    if isinstance(atom, DipoleAtom):
        dp = atom.separation ** params.p
        if not 0 < dp < params.dipole_window:
            raise InvalidAtomError(
                f"dipole separation^p = {dp:.6g} outside (0, {params.dipole_window:.6g})"
            )


def as_measure(atom: ExtremalAtom, params: KRParams) -> DiscreteMeasure:
    """Realize an extremal atom as a discrete measure."""
    validate_atom(atom, params)
    if isinstance(atom, DiracAtom):
        return DiscreteMeasure(np.array([atom.z]), np.array([atom.sign / params.alpha]))
    scale = 1.0 / (params.beta + atom.separation ** params.p)
    return DiscreteMeasure(np.array([atom.x, atom.y]), np.array([scale, -scale]))


def atom_to_json(atom: ExtremalAtom) -> dict:
    if isinstance(atom, DiracAtom):
        return {"type": "dirac", "sign": atom.sign, "z": list(atom.z)}
    return {"type": "dipole", "x": list(atom.x), "y": list(atom.y)}


def atom_from_json(obj: dict) -> ExtremalAtom:
    if obj["type"] == "dirac":
        return DiracAtom(sign=int(obj["sign"]), z=tuple(obj["z"]))
    if obj["type"] == "dipole":
        return DipoleAtom(x=tuple(obj["x"]), y=tuple(obj["y"]))
    raise ValueError(f"unknown atom type {obj.get('type')!r}")


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling over the atom index set: (source, target, mass) entries."""

    entries: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        entries = tuple((int(i), int(j), float(m)) for i, j, m in self.entries)
        for i, j, m in entries:
            if m < 0:
                raise ValueError(f"plan mass must be nonnegative, got {m} on ({i},{j})")
            if i == j:
                raise ValueError(f"plan must not contain self-loops, got ({i},{j})")
        object.__setattr__(self, "entries", entries)

    @property
    def total_mass(self) -> float:
        return sum(m for _, _, m in self.entries)

    def to_json_obj(self) -> list:
        return [{"src": i, "tgt": j, "mass": m} for i, j, m in self.entries]


def total_variation(mu: DiscreteMeasure) -> float:
    """Total variation |mu|(Omega); coincident atoms cancel before taking absolute values."""
    merged = coalesce(mu, 0.0)
    return float(np.sum(np.abs(merged.weights)))


def coalesce(mu: DiscreteMeasure, radius: float) -> DiscreteMeasure:
    """Merge atom clusters of pairwise distance <= radius (transitive closure).

    Merged atoms sit at the weight-weighted centroid with summed weight;
    atoms whose merged weight vanishes are dropped.
    """
    if radius < 0:
        raise ValueError(f"coalesce radius must be nonnegative, got {radius}")
    if mu.is_empty:
        return mu
    n = mu.num_atoms
    diffs = mu.locations[:, None, :] - mu.locations[None, :, :]
    close = np.sqrt(np.sum(diffs * diffs, axis=-1)) <= radius

    # union-find over the adjacency, n stays small so O(n^2) is fine
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if close[i, j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    locs, weights = [], []
    tol = 1e-15 * (1.0 + float(np.sum(np.abs(mu.weights))))
    for members in groups.values():
        w = float(np.sum(mu.weights[members]))
        if abs(w) <= tol:
            continue
        if len(members) == 1:
            loc = mu.locations[members[0]]
        else:
            group_w = mu.weights[members]
            denom = float(np.sum(group_w))
            if abs(denom) <= tol:
                loc = np.mean(mu.locations[members], axis=0)
            else:
                loc = np.sum(group_w[:, None] * mu.locations[members], axis=0) / denom
        locs.append(loc)
        weights.append(w)
    if not locs:
        return DiscreteMeasure.empty(mu.dim)
    return DiscreteMeasure(np.array(locs), np.array(weights))
