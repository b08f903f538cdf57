"""Z^4 geometry, seeded simple random walks, ranges and their dyadic pieces."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import streams
from .errors import LatticeBoundsError, ResourceError

DIM = 4
COORD_BITS = 16
COORD_OFFSET = 1 << (COORD_BITS - 1)
COORD_LIMIT = COORD_OFFSET  # |coordinate| must stay strictly below this
STEP_BLOCK = 1 << 16
MAX_STEPS = 1 << 27  # about 1 GiB of int16 quadruples

# direction d in 0..7 moves coordinate d >> 1 by +1 (d even) or -1 (d odd)
UNIT_STEPS = np.zeros((2 * DIM, DIM), dtype=np.int16)
for _d in range(2 * DIM):
    UNIT_STEPS[_d, _d >> 1] = 1 - 2 * (_d & 1)


def as_points(points) -> np.ndarray:
    """Coerce to an ``(m, 4)`` int64 array."""
    arr = np.asarray(points, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.shape[-1] != DIM:
        raise ValueError(f"lattice points must have {DIM} coordinates, got shape {arr.shape}")
    return arr


def check_bounds(points: np.ndarray) -> None:
    if points.size and np.abs(points).max() >= COORD_LIMIT:
        raise LatticeBoundsError(f"coordinate magnitude must be < {COORD_LIMIT}")


def pack(points) -> np.ndarray:
    """Pack points into uint64 keys, 16 offset-binary bits per coordinate."""
    pts = as_points(points)
    check_bounds(pts)
    shifted = (pts + COORD_OFFSET).astype(np.uint64)
    keys = shifted[:, 0].copy()
    for i in range(1, DIM):
        keys |= shifted[:, i] << np.uint64(COORD_BITS * i)
    return keys


def unpack(keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    mask = np.uint64((1 << COORD_BITS) - 1)
    out = np.empty((keys.size, DIM), dtype=np.int64)
    for i in range(DIM):
        out[:, i] = ((keys >> np.uint64(COORD_BITS * i)) & mask).astype(np.int64) - COORD_OFFSET
    return out


def sq_norm(x) -> int | np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return (x * x).sum(axis=-1)


class FiniteLatticeSet:
    """Immutable deduplicated set of points of Z^4.

    Points are stored sorted by packed key, which fixes the enumeration order
    for a given content.
    """

    __slots__ = ("keys", "points")

    def __init__(self, points=()):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, DIM)
        keys = np.unique(pack(pts)) if len(pts) else np.empty(0, dtype=np.uint64)
        self._set(keys)

    def _set(self, keys: np.ndarray) -> None:
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "points", unpack(keys))
        self.keys.flags.writeable = False
        self.points.flags.writeable = False

    def __setattr__(self, name, value):
        raise AttributeError("FiniteLatticeSet is immutable")

    @classmethod
    def from_keys(cls, keys: np.ndarray, *, assume_unique: bool = False) -> "FiniteLatticeSet":
        obj = cls.__new__(cls)
        keys = np.asarray(keys, dtype=np.uint64)
        obj._set(keys.copy() if assume_unique else np.unique(keys))
        return obj

    @property
    def size(self) -> int:
        return int(self.keys.size)

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        return (tuple(int(c) for c in p) for p in self.points)

    def __contains__(self, point) -> bool:
        return bool(self.contains(point)[0])

    def __eq__(self, other) -> bool:
        return isinstance(other, FiniteLatticeSet) and np.array_equal(self.keys, other.keys)

    def __hash__(self):
        return hash(self.keys.tobytes())

    def __repr__(self) -> str:
        return f"FiniteLatticeSet(size={self.size})"

    def contains(self, points) -> np.ndarray:
        pts = as_points(points)
        inside = np.all(np.abs(pts) < COORD_LIMIT, axis=1)
        out = np.zeros(len(pts), dtype=bool)
        if not self.size or not inside.any():
            return out
        q = pack(pts[inside])
        idx = np.searchsorted(self.keys, q)
        idx[idx == self.size] = 0
        out[inside] = self.keys[idx] == q
        return out

    def index_of(self, points) -> np.ndarray:
        """Positions of ``points`` in the enumeration order; all must be members."""
        q = pack(points)
        idx = np.searchsorted(self.keys, q)
        if np.any(idx >= self.size) or np.any(self.keys[np.minimum(idx, self.size - 1)] != q):
            raise ValueError("point not in set")
        return idx

    def union(self, other: "FiniteLatticeSet") -> "FiniteLatticeSet":
        return FiniteLatticeSet.from_keys(np.union1d(self.keys, other.keys), assume_unique=True)

    def intersection(self, other: "FiniteLatticeSet") -> "FiniteLatticeSet":
        return FiniteLatticeSet.from_keys(
            np.intersect1d(self.keys, other.keys, assume_unique=True), assume_unique=True
        )

    def difference(self, other: "FiniteLatticeSet") -> "FiniteLatticeSet":
        return FiniteLatticeSet.from_keys(
            np.setdiff1d(self.keys, other.keys, assume_unique=True), assume_unique=True
        )

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def issubset(self, other: "FiniteLatticeSet") -> bool:
        return bool(np.all(other.contains(self.points))) if self.size else True

    def translate(self, shift) -> "FiniteLatticeSet":
        return FiniteLatticeSet(self.points + as_points(shift))

    def center(self) -> np.ndarray:
        """Lattice point nearest to the midpoint of the bounding box."""
        if not self.size:
            raise ValueError("empty set has no center")
        lo, hi = self.points.min(axis=0), self.points.max(axis=0)
        return (lo + hi) // 2

    def radius(self, center=None) -> float:
        """Max Euclidean distance from ``center`` plus one lattice unit.

        The extra unit makes a singleton have radius 1, which is what the
        truncation-bias model in the Monte Carlo estimators expects.
        """
        c = self.center() if center is None else np.asarray(center, dtype=np.int64)
        return float(np.sqrt(sq_norm(self.points - c).max())) + 1.0


@dataclass(frozen=True)
class WalkPath:
    """Simple random walk trajectory ``S(0..n)`` stored as int16 quadruples."""

    steps: np.ndarray = field(repr=False)
    seed: int
    walk_index: int = 0

    @property
    def n(self) -> int:
        return len(self.steps) - 1

    def __len__(self) -> int:
        return len(self.steps)

    def point(self, k: int) -> np.ndarray:
        return self.steps[k].astype(np.int64)

    def to_binary(self, path) -> None:
        """Little-endian int16 quadruples, one per time step."""
        np.ascontiguousarray(self.steps, dtype="<i2").tofile(path)

    @classmethod
    def from_binary(cls, path, seed: int = 0, walk_index: int = 0) -> "WalkPath":
        steps = np.fromfile(path, dtype="<i2").reshape(-1, DIM).astype(np.int16)
        return cls(steps=steps, seed=seed, walk_index=walk_index)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "x1", "x2", "x3", "x4"])
            for k, p in enumerate(self.steps.tolist()):
                w.writerow([k, *p])


def simulate_walk(n: int, seed: int, walk_index: int = 0) -> WalkPath:
    """Simple random walk on Z^4 started at the origin.

    Increments for steps ``[b*STEP_BLOCK, (b+1)*STEP_BLOCK)`` come from the
    stream keyed by ``(seed, WALK, walk_index, b)``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > MAX_STEPS:
        raise ResourceError(f"n={n} exceeds the walk memory budget of {MAX_STEPS} steps")
    dirs = np.empty(n, dtype=np.int8)
    for b, lo in enumerate(range(0, n, STEP_BLOCK)):
        hi = min(lo + STEP_BLOCK, n)
        dirs[lo:hi] = streams.stream(seed, streams.WALK, walk_index, b).integers(0, 2 * DIM, size=hi - lo)
    steps = np.zeros((n + 1, DIM), dtype=np.int32)
    np.cumsum(UNIT_STEPS[dirs], axis=0, out=steps[1:])
    if n and np.abs(steps).max() >= COORD_LIMIT:
        raise LatticeBoundsError(f"walk left the box |S|_inf < {COORD_LIMIT}")
    steps = steps.astype(np.int16)
    steps.flags.writeable = False
    return WalkPath(steps=steps, seed=seed, walk_index=walk_index)


def range_of(path: WalkPath, m: int = 0, n: int | None = None) -> FiniteLatticeSet:
    """The set ``{S(m), ..., S(n)}`` of sites visited on ``[m, n]``."""
    n = path.n if n is None else n
    if not 0 <= m <= n <= path.n:
        raise ValueError(f"need 0 <= m <= n <= {path.n}, got m={m}, n={n}")
    return FiniteLatticeSet.from_keys(pack(path.steps[m : n + 1]))


def dyadic_bounds(n: int, p: int) -> list[tuple[int, int]]:
    """Index intervals ``[floor((j-1) n / 2^p), floor(j n / 2^p)]`` for j = 1..2^p."""
    if p < 0 or (1 << p) > max(n, 1):
        raise ValueError(f"need p >= 0 and 2^p <= n, got p={p}, n={n}")
    return [(((j - 1) * n) >> p, (j * n) >> p) for j in range(1, (1 << p) + 1)]


def dyadic_segments(path: WalkPath, p: int) -> list[FiniteLatticeSet]:
    if p > 0 and (1 << p) > path.n:
        raise ValueError(f"need 2^p <= n, got p={p}, n={path.n}")
    if p < 0:
        raise ValueError("p must be >= 0")
    if p == 0:
        return [range_of(path)]
    return [range_of(path, lo, hi) for lo, hi in dyadic_bounds(path.n, p)]


def random_box_set(rng: np.random.Generator, size: int, radius: int, center: Sequence[int] = (0, 0, 0, 0)) -> FiniteLatticeSet:
    """Uniform random subset of ``size`` points from the cube ``[-radius, radius]^4``."""
    side = 2 * radius + 1
    if size > side**DIM:
        raise ValueError("box too small for requested size")
    flat = rng.choice(side**DIM, size=size, replace=False)
    pts = np.stack(np.unravel_index(flat, (side,) * DIM), axis=1) - radius
    return FiniteLatticeSet(pts + np.asarray(center, dtype=np.int64))


def union_all(sets: Iterable[FiniteLatticeSet]) -> FiniteLatticeSet:
    keys = [s.keys for s in sets]
    return FiniteLatticeSet.from_keys(np.unique(np.concatenate(keys)) if keys else np.empty(0, np.uint64), assume_unique=True)
