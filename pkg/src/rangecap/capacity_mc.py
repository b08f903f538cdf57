"""Monte Carlo estimators of escape probabilities, capacity and cross terms.

All estimators run simple random walks against a packed hash of the target
set. Walks are stopped at a truncation radius R around the set's center,
and the bias this causes is reported with a model taken from the hitting
bound P_x(reach B(c, r)) <= C r^2 / |x - c|^2, with r the set radius.

Far from the set, a walker may jump to a uniform point on a sphere around its
position (walk-on-spheres). The jump radius is a lower bound on the distance
to the set, so a jump never skips over a hit. The lower bound comes from a
coarse occupancy grid with a Euclidean distance transform, or from the
bounding ball once the walker is outside the grid. A jump replaces a stretch
of lattice walk by its continuum exit distribution. The resulting bias is
small and is checked against the plain walk in the tests; it is not part of
the reported bias bound.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
from scipy import ndimage

from . import streams
from .green_kernel import GreenTable, default_table
from .lattice_walk import COORD_OFFSET, DIM, FiniteLatticeSet, as_points

# hitting-bound constant: sup_{|x-c| >= R} P_x(H_A < inf) <= C_HIT (r/R)^2 for A inside B(c, r)
C_HIT = 1.0
DEFAULT_RADIUS_MULT = 64.0
DEFAULT_OUTER_MULT = 64.0
DEFAULT_SPHERE_MULT = 5.0
BLOCK = 256
JUMP_MIN = 8.0
_EMPTY = np.uint64(0)  # packs the excluded corner (-2^15, ...), never a member


@dataclass
class McEstimate:
    value: float
    stderr: float
    n_samples: int
    bias_bound: float
    config: dict = field(default_factory=dict)
    seed: int = 0
    wall_time_ms: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, inline="always")
def _key(x0, x1, x2, x3):
    off = COORD_OFFSET
    return (np.uint64(x0 + off) | (np.uint64(x1 + off) << np.uint64(16))
            | (np.uint64(x2 + off) << np.uint64(32)) | (np.uint64(x3 + off) << np.uint64(48)))


@numba.njit(cache=True, inline="always")
def _slot(key, mask):
    return (key * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(20) & mask


@numba.njit(cache=True)
def _build_slots(keys, size):
    slots = np.zeros(size, dtype=np.uint64)
    mask = np.uint64(size - 1)
    for k in keys:
        i = _slot(k, mask)
        while slots[i] != 0 and slots[i] != k:
            i = (i + np.uint64(1)) & mask
        slots[i] = k
    return slots


@numba.njit(cache=True, inline="always")
def _member(slots, mask, x):
    lim = COORD_OFFSET
    if abs(x[0]) >= lim or abs(x[1]) >= lim or abs(x[2]) >= lim or abs(x[3]) >= lim:
        return False
    k = _key(x[0], x[1], x[2], x[3])
    i = _slot(k, mask)
    while True:
        s = slots[i]
        if s == k:
            return True
        if s == 0:
            return False
        i = (i + np.uint64(1)) & mask


@numba.njit(cache=True, inline="always")
def _dist_bound(x, center, radius, g_lo, cell, dist):
    # lower bound on the Euclidean distance from x to the set
    d2 = 0.0
    for i in range(4):
        t = x[i] - center[i]
        d2 += t * t
    best = math.sqrt(d2) - radius
    inside = True
    q0 = (x[0] - g_lo[0]) // cell
    q1 = (x[1] - g_lo[1]) // cell
    q2 = (x[2] - g_lo[2]) // cell
    q3 = (x[3] - g_lo[3]) // cell
    if (q0 < 0 or q1 < 0 or q2 < 0 or q3 < 0 or q0 >= dist.shape[0] or q1 >= dist.shape[1]
            or q2 >= dist.shape[2] or q3 >= dist.shape[3]):
        inside = False
    if inside:
        g = cell * (dist[q0, q1, q2, q3] - 2.0)
        if g > best:
            best = g
    return best


@numba.njit(cache=True, inline="always")
def _jump(rng, x, rho):
    g0 = rng.standard_normal()
    g1 = rng.standard_normal()
    g2 = rng.standard_normal()
    g3 = rng.standard_normal()
    s = rho / math.sqrt(g0 * g0 + g1 * g1 + g2 * g2 + g3 * g3)
    x[0] += np.int64(round(g0 * s))
    x[1] += np.int64(round(g1 * s))
    x[2] += np.int64(round(g2 * s))
    x[3] += np.int64(round(g3 * s))


@numba.njit(cache=True, nogil=True)
def _walk_until(rng, start, first_step, slots, mask, center, r2_stop, radius,
                g_lo, cell, dist, accelerate, jump_min):
    """Run one walk. Returns 1 if it meets the set, 0 if it leaves the stop radius."""
    x = start.copy()
    bits = np.uint64(0)
    left = 0
    took_step = not first_step
    while True:
        if accelerate and took_step:
            rho = _dist_bound(x, center, radius, g_lo, cell, dist) - 2.0
            if rho >= jump_min:
                _jump(rng, x, rho)
                d2 = 0.0
                for i in range(4):
                    t = x[i] - center[i]
                    d2 += t * t
                if d2 >= r2_stop:
                    return 0
                continue
        if left == 0:
            bits = np.uint64(rng.random() * 9007199254740992.0)
            left = 17
        d = np.int64(bits & np.uint64(7))
        bits >>= np.uint64(3)
        left -= 1
        x[d >> 1] += 1 - 2 * (d & 1)
        took_step = True
        d2 = 0.0
        for i in range(4):
            t = x[i] - center[i]
            d2 += t * t
        if d2 >= r2_stop:
            return 0
        if _member(slots, mask, x):
            return 1


@numba.njit(cache=True, nogil=True)
def _coupled_block(rng, start, n_trials, slots, mask, center, r2_inner, r2_stop, radius,
                   g_lo, cell, dist, accelerate, jump_min):
    """Escape counts at two radii from the same walks: (left inner ball, left outer ball)."""
    inner = 0
    outer = 0
    for _ in range(n_trials):
        x = start.copy()
        bits = np.uint64(0)
        left = 0
        took_step = False
        crossed = False
        while True:
            if accelerate and took_step:
                rho = _dist_bound(x, center, radius, g_lo, cell, dist) - 2.0
                if rho >= jump_min:
                    _jump(rng, x, rho)
                else:
                    rho = -1.0
            else:
                rho = -1.0
            if rho < 0.0:
                if left == 0:
                    bits = np.uint64(rng.random() * 9007199254740992.0)
                    left = 17
                d = np.int64(bits & np.uint64(7))
                bits >>= np.uint64(3)
                left -= 1
                x[d >> 1] += 1 - 2 * (d & 1)
                took_step = True
            d2 = 0.0
            for i in range(4):
                t = x[i] - center[i]
                d2 += t * t
            if d2 >= r2_inner:
                crossed = True
            if d2 >= r2_stop:
                outer += 1
                break
            if rho < 0.0 and _member(slots, mask, x):
                break
        inner += crossed
    return inner, outer


@numba.njit(cache=True, nogil=True)
def _escape_block(rng, start, n_trials, slots, mask, center, r2_stop, radius,
                  g_lo, cell, dist, accelerate, jump_min):
    esc = 0
    for _ in range(n_trials):
        esc += 1 - _walk_until(rng, start, True, slots, mask, center, r2_stop, radius,
                               g_lo, cell, dist, accelerate, jump_min)
    return esc


@numba.njit(cache=True, nogil=True)
def _hit_block(rng, starts, slots, mask, center, r2_stop, radius, g_lo, cell, dist,
               accelerate, jump_min, out):
    for k in range(starts.shape[0]):
        if _member(slots, mask, starts[k]):
            out[k] = 1
        else:
            out[k] = _walk_until(rng, starts[k], False, slots, mask, center, r2_stop, radius,
                                 g_lo, cell, dist, accelerate, jump_min)


# --------------------------------------------------------------------------
# packed targets


class PackedTarget:
    """Hash table plus distance grid for one target set."""

    def __init__(self, A: FiniteLatticeSet, *, max_cells: int = 2_000_000, jump_min: float = JUMP_MIN):
        if len(A) == 0:
            raise ValueError("target set must be nonempty")
        self.set = A
        size = 1 << max(4, int(np.ceil(np.log2(4 * len(A)))))
        self.slots = _build_slots(A.keys, size)
        self.mask = np.uint64(size - 1)
        self.center = A.center().astype(np.int64)
        self.radius = A.radius(self.center)
        self.jump_min = float(jump_min)
        pts = A.points
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        cell = 2
        while True:
            margin = 4 * cell
            shape = (hi - lo + 2 * margin) // cell + 1
            if np.prod(shape.astype(float)) <= max_cells:
                break
            cell *= 2
        self.cell = int(cell)
        self.g_lo = (lo - margin).astype(np.int64)
        occ = np.ones(tuple(int(s) for s in shape), dtype=bool)
        q = (pts - self.g_lo) // cell
        occ[q[:, 0], q[:, 1], q[:, 2], q[:, 3]] = False
        self.dist = ndimage.distance_transform_edt(occ).astype(np.float64)

    def kernel_args(self, r2_stop: float, accelerate: bool):
        return (self.slots, self.mask, self.center.astype(np.float64), float(r2_stop), float(self.radius),
                self.g_lo, self.cell, self.dist, bool(accelerate), self.jump_min)


def _run_blocks(fn, n_blocks: int, workers: int):
    if workers <= 1 or n_blocks <= 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _count_escapes(target: PackedTarget, y, K: int, R: float, seed: int, stream_id: tuple,
                   accelerate: bool, workers: int = 1) -> int:
    args = target.kernel_args(R * R, accelerate)
    start = as_points(y)[0]
    n_blocks = -(-K // BLOCK)

    def run(b):
        rng = streams.stream(seed, streams.MC_ESCAPE, *stream_id, b)
        return _escape_block(rng, start, min(BLOCK, K - b * BLOCK), *args)

    return int(sum(_run_blocks(run, n_blocks, workers)))


def _check_radius(R: float, r: float) -> None:
    if not R > 4.0 * r:
        raise ValueError(f"truncation radius R={R} must exceed 4 * set radius = {4.0 * r}")


def _check_k(K: int) -> None:
    if K <= 0:
        raise ValueError("number of walks K must be positive")


def hit_bias(r: float, R: float) -> float:
    return C_HIT * (r / R) ** 2


# --------------------------------------------------------------------------
# estimators


def estimate_escape(A: FiniteLatticeSet, y, R: float | None = None, K: int = 10_000, seed: int = 0,
                    *, accelerate: bool = True, workers: int = 1, target: PackedTarget | None = None) -> McEstimate:
    """Fraction of K walks from y that leave B(center(A), R) before coming back to A."""
    _check_k(K)
    t0 = time.perf_counter()
    if y not in A:
        raise ValueError("start point must belong to the set")
    target = target or PackedTarget(A)
    r = target.radius
    R = DEFAULT_RADIUS_MULT * r if R is None else float(R)
    _check_radius(R, r)
    idx = int(A.index_of(y)[0])
    esc = _count_escapes(target, y, K, R, seed, (0, idx), accelerate, workers)
    p = esc / K
    return McEstimate(
        value=p, stderr=math.sqrt(p * (1 - p) / K), n_samples=K, bias_bound=p * hit_bias(r, R),
        config={"R": R, "K": K, "set_radius": r, "set_size": len(A), "accelerate": accelerate, "start": list(map(int, as_points(y)[0]))},
        seed=seed, wall_time_ms=1e3 * (time.perf_counter() - t0),
    )


def estimate_escape_coupled(A: FiniteLatticeSet, y, R_inner: float, R_outer: float, K: int = 10_000,
                            seed: int = 0, *, accelerate: bool = True, workers: int = 1
                            ) -> tuple[McEstimate, McEstimate]:
    """Escape estimates at two truncation radii from one set of walks.

    Walks run to R_outer; a walk counts as escaped at R_inner if it left that
    ball before hitting A. Sharing the walks removes most of the noise from the
    difference, which isolates the truncation bias (a Richardson check).
    """
    _check_k(K)
    if not R_outer > R_inner:
        raise ValueError("need R_outer > R_inner")
    t0 = time.perf_counter()
    if y not in A:
        raise ValueError("start point must belong to the set")
    target = PackedTarget(A)
    r = target.radius
    _check_radius(R_inner, r)
    slots, mask, center, _, radius, g_lo, cell, dist, acc, jump_min = target.kernel_args(R_outer**2, accelerate)
    start = as_points(y)[0]
    idx = int(A.index_of(y)[0])
    n_blocks = -(-K // BLOCK)

    def run(b):
        rng = streams.stream(seed, streams.MC_ESCAPE, 3, idx, b)
        return _coupled_block(rng, start, min(BLOCK, K - b * BLOCK), slots, mask, center, R_inner**2, R_outer**2,
                              radius, g_lo, cell, dist, acc, jump_min)

    counts = np.array(_run_blocks(run, n_blocks, workers)).sum(axis=0)
    wall = 1e3 * (time.perf_counter() - t0)
    out = []
    for R, esc in zip((R_inner, R_outer), counts):
        p = esc / K
        out.append(McEstimate(
            value=p, stderr=math.sqrt(p * (1 - p) / K), n_samples=K, bias_bound=p * hit_bias(r, R),
            config={"R": float(R), "K": K, "set_radius": r, "set_size": len(A), "accelerate": accelerate,
                    "coupled_with": float(R_outer if R == R_inner else R_inner)},
            seed=seed, wall_time_ms=wall,
        ))
    return out[0], out[1]


def estimate_capacity_sampled(A: FiniteLatticeSet, M: int | None = None, K: int = 256, R: float | None = None,
                              seed: int = 0, *, accelerate: bool = True, workers: int = 1) -> McEstimate:
    """|A| times the mean escape estimate over M points drawn without replacement.

    The standard error combines the spread of the true escape probabilities
    over the set (with the finite-population correction) and the binomial
    noise of each per-point estimate.
    """
    _check_k(K)
    t0 = time.perf_counter()
    n = len(A)
    M = n if M is None else int(M)
    if not 1 <= M <= n:
        raise ValueError(f"need 1 <= M <= |A| = {n}")
    target = PackedTarget(A)
    r = target.radius
    R = DEFAULT_RADIUS_MULT * r if R is None else float(R)
    _check_radius(R, r)
    if M == n:
        chosen = np.arange(n)
    else:
        chosen = np.sort(streams.stream(seed, streams.SAMPLING).choice(n, size=M, replace=False))
    args = target.kernel_args(R * R, accelerate)
    pts = A.points
    n_blocks = -(-K // BLOCK)
    jobs = [(i, b) for i in chosen for b in range(n_blocks)]

    def run(job_index):
        i, b = jobs[job_index]
        rng = streams.stream(seed, streams.MC_ESCAPE, 0, int(i), b)
        return _escape_block(rng, pts[i], min(BLOCK, K - b * BLOCK), *args)

    counts = np.array(_run_blocks(run, len(jobs), workers)).reshape(M, n_blocks).sum(axis=1)
    e = counts / K
    value = n * float(e.mean())
    within = float(np.mean(e * (1 - e))) / max(K - 1, 1)
    between = max(float(e.var(ddof=1)) - within, 0.0) if M > 1 else 0.0
    fpc = 1.0 - M / n
    var = n * n * (fpc * between / M + within / M)
    return McEstimate(
        value=value, stderr=math.sqrt(var), n_samples=M * K, bias_bound=value * hit_bias(r, R),
        config={"M": M, "K": K, "R": R, "set_radius": r, "set_size": n, "accelerate": accelerate},
        seed=seed, wall_time_ms=1e3 * (time.perf_counter() - t0),
    )


def estimate_capacity_sphere(A: FiniteLatticeSet, R: float | None = None, K: int = 10_000, seed: int = 0,
                             *, outer_mult: float = DEFAULT_OUTER_MULT, accelerate: bool = True, workers: int = 1,
                             table: GreenTable | None = None) -> McEstimate:
    """Average of 1{walk from y hits A} / G_d(y - c) over y uniform on the sphere |y - c| = R.

    By Newton's theorem the spherical mean of the Green kernel centered inside
    the sphere equals its value on the sphere, so the continuum version of this
    average is exactly Cap(A). Walks are stopped at radius outer_mult * R.
    The bias bound adds the mass lost at the outer radius and the lattice
    correction |G_d / 4G - 1| at distance R - r in numerator and denominator.
    """
    _check_k(K)
    t0 = time.perf_counter()
    table = table or default_table()
    target = PackedTarget(A)
    r = target.radius
    R = DEFAULT_SPHERE_MULT * r if R is None else float(R)
    _check_radius(R, r)
    R_out = outer_mult * R
    c = target.center
    n_blocks = -(-K // BLOCK)
    starts = np.empty((K, DIM), dtype=np.int64)
    for b in range(n_blocks):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, K)
        g = streams.stream(seed, streams.MC_SPHERE, 0, b).standard_normal((hi - lo, DIM))
        starts[lo:hi] = c + np.rint(R * g / np.linalg.norm(g, axis=1, keepdims=True)).astype(np.int64)
    inv_g = 1.0 / table.values(starts - c)
    hits = np.zeros(K, dtype=np.uint8)
    args = target.kernel_args(R_out * R_out, accelerate)

    def run(b):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, K)
        rng = streams.stream(seed, streams.MC_SPHERE, 1, b)
        _hit_block(rng, starts[lo:hi], *args, hits[lo:hi])

    _run_blocks(run, n_blocks, workers)
    samples = hits * inv_g
    value = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(K)) if K > 1 else float("inf")
    trunc = hit_bias(r, R_out) * float(inv_g.mean())
    d = R - r - 1.0
    lattice = 2.0 * table.asymptotic_constant * math.pi**2 / (2.0 * d * d)
    return McEstimate(
        value=value, stderr=stderr, n_samples=K, bias_bound=trunc + value * lattice,
        config={"R": R, "R_out": R_out, "K": K, "set_radius": r, "set_size": len(A), "accelerate": accelerate,
                "hits": int(hits.sum())},
        seed=seed, wall_time_ms=1e3 * (time.perf_counter() - t0),
    )


def estimate_chi_mc(A: FiniteLatticeSet, B: FiniteLatticeSet, pair_samples: int = 200, K: int = 256,
                    R: float | None = None, seed: int = 0, *, accelerate: bool = True, workers: int = 1,
                    table: GreenTable | None = None) -> McEstimate:
    """Cross term chi(A, B) from uniformly sampled pairs (y, z) in (A \\ B) x B.

    Each pair contributes e_{A u B}(y) G_d(y - z) e_B(z), with both escape
    probabilities replaced by independent truncated-walk estimates.
    """
    _check_k(K)
    if pair_samples <= 0:
        raise ValueError("pair_samples must be positive")
    t0 = time.perf_counter()
    table = table or default_table()
    only_a = A - B
    if len(only_a) == 0:
        return McEstimate(0.0, 0.0, 0, 0.0, {"pair_samples": pair_samples, "K": K}, seed, 0.0)
    U = A | B
    tu, tb = PackedTarget(U), PackedTarget(B)
    R_u = DEFAULT_RADIUS_MULT * tu.radius if R is None else float(R)
    R_b = DEFAULT_RADIUS_MULT * tb.radius if R is None else float(R)
    _check_radius(R_u, tu.radius)
    _check_radius(R_b, tb.radius)
    rng = streams.stream(seed, streams.MC_PAIRS)
    ys = only_a.points[rng.integers(0, len(only_a), size=pair_samples)]
    zs = B.points[rng.integers(0, len(B), size=pair_samples)]
    green = table.values(zs - ys)

    def run(k):
        eu = _count_escapes(tu, ys[k], K, R_u, seed, (1, k), accelerate) / K
        eb = _count_escapes(tb, zs[k], K, R_b, seed, (2, k), accelerate) / K
        return eu * eb

    prods = np.array(_run_blocks(run, pair_samples, workers))
    scale = len(only_a) * len(B)
    vals = scale * prods * green
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(pair_samples)) if pair_samples > 1 else float("inf")
    bias = value * ((1 + hit_bias(tu.radius, R_u)) * (1 + hit_bias(tb.radius, R_b)) - 1)
    return McEstimate(
        value=value, stderr=stderr, n_samples=pair_samples * 2 * K, bias_bound=bias,
        config={"pair_samples": pair_samples, "K": K, "R_union": R_u, "R_B": R_b, "accelerate": accelerate},
        seed=seed, wall_time_ms=1e3 * (time.perf_counter() - t0),
    )
