"""Green's functions of simple random walk on Z^4 and of Brownian motion in R^4.

The discrete Green's function is evaluated through the continuous-time
representation

    G_d(x) = 4 * int_0^inf prod_i exp(-s) I_{|x_i|}(s) ds,

which is the expected occupation time of x for the rate-one walk with
exponential holding times. The integral is done by the trapezoid rule in
log s, for a whole batch of points at once, on top of a table of scaled
Bessel values indexed by (order, node). Far from the origin the table
switches to the leading asymptotic 4 G(x).
"""
from __future__ import annotations

import csv
import math
import threading
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial

import numba
import numpy as np
from scipy import integrate, special

from .errors import CapabilityError, SingularityError
from .lattice_walk import DIM, as_points

TWO_PI_SQ = 2.0 * math.pi**2

METHOD_INTEGRAL = "integral"
METHOD_SERIES = "series+asymptotic"
METHOD_ASYMPTOTIC = "asymptotic"
_METHODS = (METHOD_INTEGRAL, METHOD_SERIES, METHOD_ASYMPTOTIC)


def continuous_green(z) -> float | np.ndarray:
    """1 / (2 pi^2 |z|^2), vectorised over the last axis."""
    z = np.asarray(z, dtype=float)
    r2 = (z * z).sum(axis=-1)
    if np.any(r2 == 0):
        raise SingularityError("continuous Green's function is singular at 0")
    out = 1.0 / (TWO_PI_SQ * r2)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_f(x, k: int) -> float:
    """Local-CLT surrogate 8/(pi^2 k^2) exp(-2|x|^2/k) for p_k(x)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.asarray(x, dtype=float)
    return float(8.0 / (math.pi**2 * k * k) * math.exp(-2.0 * float(x @ x) / k))


# --------------------------------------------------------------------------
# heat kernel oracle


@lru_cache(maxsize=None)
def _coord_egf(a: int, kmax: int) -> tuple[Fraction, ...]:
    # P(1-d walk with m steps ends at a) / m!
    out = []
    for m in range(kmax + 1):
        if m >= a and (m - a) % 2 == 0:
            out.append(Fraction(comb(m, (m + a) // 2), (2**m) * factorial(m)))
        else:
            out.append(Fraction(0))
    return tuple(out)


def _convolve(u, v, kmax):
    return [sum(u[i] * v[k - i] for i in range(k + 1)) for k in range(kmax + 1)]


class HeatKernelOracle:
    """Exact transition probabilities p_k(x) = P(S_k = x) for small k.

    Uses the multinomial split of k steps among the four coordinates: with
    c_a(m) = P_1d(m steps end at a) / m!, one has
    p_k(x) = k!/4^k * (c_{x1} * c_{x2} * c_{x3} * c_{x4})(k), a discrete
    convolution of exponential generating functions. Arithmetic is exact.
    """

    def __init__(self, max_n: int = 64):
        self.max_n = max_n
        self._cache: dict[tuple[int, ...], list[Fraction]] = {}

    def _check(self, k: int) -> None:
        if k < 0:
            raise ValueError("k must be >= 0")
        if k > self.max_n:
            raise CapabilityError(f"heat kernel oracle is limited to k <= {self.max_n}")

    def series(self, x) -> list[Fraction]:
        """[p_0(x), ..., p_max_n(x)] as exact fractions."""
        key = tuple(sorted(abs(int(c)) for c in np.asarray(x).ravel()))
        if key not in self._cache:
            seqs = [_coord_egf(a, self.max_n) for a in key]
            acc = list(seqs[0])
            for s in seqs[1:]:
                acc = _convolve(acc, s, self.max_n)
            self._cache[key] = [acc[k] * factorial(k) / Fraction(4**k) for k in range(self.max_n + 1)]
        return self._cache[key]

    def exact(self, x, k: int) -> Fraction:
        self._check(k)
        return self.series(x)[k]

    def __call__(self, x, k: int) -> float:
        return float(self.exact(x, k))

    def dense(self, k: int) -> np.ndarray:
        """p_k on the box [-k, k]^4 by direct dynamic programming (k <= 24)."""
        self._check(k)
        if k > 24:
            raise CapabilityError("dense heat kernel arrays are limited to k <= 24")
        side = 2 * k + 1
        p = np.zeros((side,) * DIM)
        p[(k,) * DIM] = 1.0
        for _ in range(k):
            q = np.zeros_like(p)
            for axis in range(DIM):
                q += np.roll(p, 1, axis=axis) + np.roll(p, -1, axis=axis)
            p = q / (2 * DIM)
        return p


_default_oracle = HeatKernelOracle()


def heat_kernel(x, k: int, oracle: HeatKernelOracle | None = None) -> float:
    return (oracle or _default_oracle)(x, k)


# --------------------------------------------------------------------------
# integral evaluation


class _BesselRule:
    """Trapezoid nodes in u = log s with a table of exp(-s) I_nu(s)."""

    def __init__(self, max_order: int, h: float = 1.0 / 16, lo: float = -34.0, hi: float = 18.0):
        u = lo + h * np.arange(int(round((hi - lo) / h)) + 1)
        self.h = h
        self.s = np.exp(u)
        self.s_max = float(self.s[-1])
        self.table = special.ive(np.arange(max_order + 1)[:, None], self.s[None, :])
        self.max_order = max_order

    def integrate(self, coords: np.ndarray, every: int = 1) -> np.ndarray:
        """G_d for rows of non-negative coordinates <= max_order."""
        tab = self.table[:, ::every]
        h = self.h * every
        w = np.full(tab.shape[1], h)
        w[0] = w[-1] = h / 2
        weight = 4.0 * w * self.s[::every]
        out = np.empty(len(coords))
        chunk = 4096
        for lo in range(0, len(coords), chunk):
            c = coords[lo : lo + chunk]
            prod = tab[c[:, 0]] * tab[c[:, 1]] * tab[c[:, 2]] * tab[c[:, 3]]
            body = prod @ weight
            # integrand at the last node; its slope in u is about minus itself
            g_end = prod[:, -1] * 4.0 * self.s_max
            em = h**2 / 12.0 * g_end
            mu = (4.0 * c.astype(float) ** 2 - 1.0).sum(axis=1)
            tail = (1.0 / self.s_max - mu / (16.0 * self.s_max**2)) / math.pi**2
            out[lo : lo + chunk] = body + em + tail
        return out


def green_integral_quad(x, rel_tol: float = 1e-12) -> float:
    """Adaptive-quadrature evaluation of the Bessel integral (reference path).

    The range is split at max(1, |x|^2/8), near the bulk of the integrand,
    and the second piece is mapped to a finite interval by QUADPACK.
    """
    nu = np.abs(np.asarray(x, dtype=np.int64).ravel())

    def f(s):
        return 4.0 * np.prod(special.ive(nu, s))

    split = max(1.0, float(nu @ nu) / 8.0)
    a = integrate.quad(f, 0.0, split, epsabs=0.0, epsrel=rel_tol, limit=500)[0]
    b = integrate.quad(f, split, np.inf, epsabs=0.0, epsrel=rel_tol, limit=500)[0]
    return a + b


def green_series(x, oracle: HeatKernelOracle | None = None, fit_from: int | None = None) -> float:
    """Sum_{k<=K} p_k(x) plus a fitted local-CLT tail.

    Independent of the Bessel integral: the exact p_k come from the
    heat-kernel oracle, and the tail sums f_k(x) (1 + a/k + b/k^2 + c/k^3)
    with (a, b, c) fitted to the exact ratios p_k/f_k on the upper half of
    the available k.
    """
    oracle = oracle or _default_oracle
    kmax = oracle.max_n
    xs = np.asarray(x, dtype=float).ravel()
    parity = int(np.abs(xs).sum()) % 2
    p = [float(v) for v in oracle.series(x)]
    head = sum(p)
    fit_from = fit_from or kmax // 2
    ks = np.array([k for k in range(fit_from, kmax + 1) if k % 2 == parity and p[k] > 0], dtype=float)
    ratios = np.array([p[int(k)] / gaussian_f(xs, int(k)) - 1.0 for k in ks])
    design = np.stack([ks**-1, ks**-2, ks**-3], axis=1)
    coef, *_ = np.linalg.lstsq(design, ratios, rcond=None)
    k_end = 2_000_000
    kt = np.arange(kmax + 1 + ((kmax + 1 + parity) % 2), k_end, 2, dtype=float)
    r2 = float(xs @ xs)
    fk = 8.0 / (math.pi**2 * kt**2) * np.exp(-2.0 * r2 / kt)
    tail = float(np.sum(fk * (1.0 + coef[0] / kt + coef[1] / kt**2 + coef[2] / kt**3)))
    tail += 4.0 / (math.pi**2 * k_end)  # remainder of sum over even/odd k of 8/(pi^2 k^2)
    return head + tail


# --------------------------------------------------------------------------
# cached table


@numba.njit(cache=True)
def _canon(a0, a1, a2, a3):
    a0, a1, a2, a3 = abs(a0), abs(a1), abs(a2), abs(a3)
    if a0 > a1:
        a0, a1 = a1, a0
    if a2 > a3:
        a2, a3 = a3, a2
    if a0 > a2:
        a0, a2 = a2, a0
    if a1 > a3:
        a1, a3 = a3, a1
    if a1 > a2:
        a1, a2 = a2, a1
    return np.uint64(a0) | (np.uint64(a1) << np.uint64(16)) | (np.uint64(a2) << np.uint64(32)) | (np.uint64(a3) << np.uint64(48))


@numba.njit(cache=True)
def _canonical_keys(x):
    out = np.empty(x.shape[0], dtype=np.uint64)
    for i in range(x.shape[0]):
        out[i] = _canon(x[i, 0], x[i, 1], x[i, 2], x[i, 3])
    return out


@numba.njit(cache=True)
def _pair_keys(p, q):
    out = np.empty((p.shape[0], q.shape[0]), dtype=np.uint64)
    for i in range(p.shape[0]):
        for j in range(q.shape[0]):
            out[i, j] = _canon(q[j, 0] - p[i, 0], q[j, 1] - p[i, 1], q[j, 2] - p[i, 2], q[j, 3] - p[i, 3])
    return out


def canonical_keys(x) -> np.ndarray:
    """Symmetry-reduced keys: sorted absolute coordinates packed into uint64."""
    return _canonical_keys(as_points(x))


def decode_keys(keys) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    mask = np.uint64(0xFFFF)
    return np.stack([((keys >> np.uint64(16 * i)) & mask).astype(np.int64) for i in range(DIM)], axis=1)


class GreenTable:
    """Cache of G_d values keyed by sorted absolute coordinates.

    Points with |x| <= exact_radius are evaluated by the Bessel integral to
    relative accuracy ``target_rel_err``; beyond that the value is 4 G(x) with
    error bound ``asymptotic_constant / |x|^4``. The constant is calibrated
    against the integral on 32 <= |x| <= exact_radius the first time it is
    needed. Reads are lock-free; inserts take a lock.
    """

    def __init__(self, target_rel_err: float = 1e-10, exact_radius: float = 64.0):
        self.target_rel_err = target_rel_err
        self.exact_radius = float(exact_radius)
        self._rule = _BesselRule(max_order=int(math.floor(exact_radius)))
        self._keys = np.empty(0, dtype=np.uint64)
        self._vals = np.empty(0)
        self._errs = np.empty(0)
        self._methods = np.empty(0, dtype=np.int8)
        self._lock = threading.Lock()
        self._asym_c: float | None = None

    def __len__(self) -> int:
        return int(self._keys.size)

    # -- evaluation -------------------------------------------------------

    def _compute(self, keys: np.ndarray):
        coords = decode_keys(keys)
        vals = self._rule.integrate(coords)
        coarse = self._rule.integrate(coords, every=2)
        errs = np.maximum(np.abs(vals - coarse) / vals, np.finfo(float).eps)
        if np.any(errs > self.target_rel_err):
            bad = coords[np.argmax(errs)]
            fixed = green_integral_quad(bad, rel_tol=self.target_rel_err / 10)
            raise ArithmeticError(f"integral did not reach target at {bad}: {errs.max():.2e} (quad gives {fixed})")
        return vals, errs

    def _insert(self, keys, vals, errs, methods) -> None:
        with self._lock:
            fresh = ~np.isin(keys, self._keys)
            if not fresh.any():
                return
            allk = np.concatenate([self._keys, keys[fresh]])
            order = np.argsort(allk, kind="stable")
            self._keys = allk[order]
            self._vals = np.concatenate([self._vals, vals[fresh]])[order]
            self._errs = np.concatenate([self._errs, errs[fresh]])[order]
            self._methods = np.concatenate([self._methods, methods[fresh]])[order]

    def _lookup_unique(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and relative error bounds for sorted unique canonical keys."""
        coords = decode_keys(keys)
        r2 = (coords * coords).sum(axis=1)
        far = r2 > self.exact_radius**2
        vals = np.empty(keys.size)
        errs = np.empty(keys.size)
        if far.any():
            vals[far] = 2.0 / (math.pi**2 * r2[far])
            errs[far] = self.asymptotic_constant / r2[far] ** 2 / vals[far]
        near = ~far
        if near.any():
            kn = keys[near]
            tk, tv, te = self._keys, self._vals, self._errs
            idx = np.searchsorted(tk, kn)
            idx_c = np.minimum(idx, max(tk.size - 1, 0))
            hit = (idx < tk.size) & (tk[idx_c] == kn) if tk.size else np.zeros(kn.size, bool)
            v = np.empty(kn.size)
            e = np.empty(kn.size)
            v[hit], e[hit] = tv[idx_c[hit]], te[idx_c[hit]]
            if (~hit).any():
                mv, me = self._compute(kn[~hit])
                v[~hit], e[~hit] = mv, me
                self._insert(kn[~hit], mv, me, np.zeros(mv.size, dtype=np.int8))
            vals[near], errs[near] = v, e
        return vals, errs

    def values(self, x) -> np.ndarray:
        keys = canonical_keys(x)
        uniq, inv = np.unique(keys, return_inverse=True)
        vals, _ = self._lookup_unique(uniq)
        return vals[inv]

    def value(self, x) -> float:
        return float(self.values(as_points(x))[0])

    def value_with_error(self, x) -> tuple[float, float, str]:
        keys = canonical_keys(x)
        v, e = self._lookup_unique(keys[:1])
        coords = decode_keys(keys[:1])
        method = METHOD_ASYMPTOTIC if (coords**2).sum() > self.exact_radius**2 else METHOD_INTEGRAL
        return float(v[0]), float(e[0]), method

    @property
    def origin_value(self) -> float:
        return self.value(np.zeros(DIM, dtype=np.int64))

    def cross_matrix(self, p, q) -> np.ndarray:
        """Matrix [G_d(q_j - p_i)]_{ij}."""
        keys = _pair_keys(as_points(p), as_points(q))
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        vals, _ = self._lookup_unique(uniq)
        return vals[inv].reshape(keys.shape)

    def matrix(self, points) -> np.ndarray:
        pts = as_points(points)
        return self.cross_matrix(pts, pts)

    # -- asymptotic regime --------------------------------------------------

    @property
    def asymptotic_constant(self) -> float:
        """c with |G_d(x) - 4G(x)| <= c / |x|^4 beyond the integral radius."""
        if self._asym_c is None:
            self._asym_c = self._calibrate()
        return self._asym_c

    def _calibrate(self) -> float:
        r_hi = self.exact_radius
        r_lo = r_hi / 2
        pts = []
        for m in range(1, DIM + 1):  # axis, face and body diagonals
            for r in np.linspace(r_lo, r_hi, 9):
                a = int(r / math.sqrt(m))
                pts.append([a] * m + [0] * (DIM - m))
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = np.abs(rng.normal(size=DIM))
            v *= rng.uniform(r_lo, r_hi) / np.linalg.norm(v)
            pts.append(np.floor(v).astype(int))
        pts = np.array(pts, dtype=np.int64)
        r2 = (pts * pts).sum(axis=1)
        pts = pts[(r2 >= r_lo**2) & (r2 <= r_hi**2)]
        r2 = (pts * pts).sum(axis=1)
        g = self.values(pts)
        c = np.abs(g - 2.0 / (math.pi**2 * r2)) * r2**2
        return float(1.25 * c.max())

    # -- persistence --------------------------------------------------------

    def to_csv(self, path) -> None:
        coords = decode_keys(self._keys)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", "x4", "value", "rel_err", "method"])
            for c, v, e, m in zip(coords.tolist(), self._vals, self._errs, self._methods):
                w.writerow([*c, repr(float(v)), repr(float(e)), _METHODS[m]])

    @classmethod
    def from_csv(cls, path, **kwargs) -> "GreenTable":
        table = cls(**kwargs)
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append(row)
        if rows:
            coords = np.array([[int(r[f"x{i}"]) for i in range(1, 5)] for r in rows], dtype=np.int64)
            keys = canonical_keys(coords)
            vals = np.array([float(r["value"]) for r in rows])
            errs = np.array([float(r["rel_err"]) for r in rows])
            methods = np.array([_METHODS.index(r["method"]) for r in rows], dtype=np.int8)
            uniq, first = np.unique(keys, return_index=True)
            table._insert(uniq, vals[first], errs[first], methods[first])
        return table


_default_table: GreenTable | None = None


def default_table() -> GreenTable:
    global _default_table
    if _default_table is None:
        _default_table = GreenTable()
    return _default_table


def discrete_green(x, table: GreenTable | None = None) -> float:
    return (table or default_table()).value(x)
