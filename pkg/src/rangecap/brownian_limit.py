"""Brownian functionals behind the CLT limit of the range capacity.

A ``BrownianGrid`` stores a 4-d Brownian path on the fine grid t = k/(2N),
so the values at the cell midpoints (k + 1/2)/N' of every coarser grid
N' <= N are available exactly. All double integrals are midpoint Riemann
sums over cells, which never evaluate the kernel on the diagonal s = t.

The dyadic squares are A_{i,j} = [(2j-2)/2^i, (2j-1)/2^i] x [(2j-1)/2^i, 2j/2^i]
for i >= 1, j <= 2^(i-1); they tile the triangle {s <= t}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from . import streams
from .errors import SingularityError

TWO_PI_SQ = 2.0 * math.pi**2
LN2 = math.log(2.0)
MEAN_I11 = LN2 / (4.0 * math.pi**2)  # E int_{A_{1,1}} G(beta_s, beta_t) ds dt
MEAN_X = LN2  # E int int |beta_s - beta'_t|^-2 ds dt

_FM = {"reassoc", "contract", "arcp"}


@dataclass(frozen=True)
class BrownianGrid:
    N: int
    path: np.ndarray = field(repr=False)  # shape (2N + 1, 4), times k / (2N)
    seed: int = 0
    trial: int = 0

    @property
    def points(self) -> np.ndarray:
        """Values at t = k/N, k = 0..N."""
        return self.path[::2]

    def midpoints(self, resolution: int | None = None) -> np.ndarray:
        """Values at t = (k + 1/2)/resolution as a (4, resolution) array."""
        res = self.N if resolution is None else int(resolution)
        if res < 1 or self.N % res:
            raise ValueError(f"resolution {res} must divide N = {self.N}")
        stride = self.N // res
        return np.ascontiguousarray(self.path[stride::2 * stride][:res].T)

    @classmethod
    def from_values(cls, path, seed: int = 0, trial: int = 0) -> "BrownianGrid":
        path = np.asarray(path, dtype=float)
        if path.ndim != 2 or path.shape[1] != 4 or (path.shape[0] - 1) % 2:
            raise ValueError("path must have shape (2N + 1, 4)")
        return cls(N=(path.shape[0] - 1) // 2, path=path, seed=seed, trial=trial)


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def simulate_bm(N: int, seed: int, trial: int = 0) -> BrownianGrid:
    """Standard 4-d Brownian motion on [0, 1] sampled at t = k/(2N)."""
    if N < 2 or not _is_pow2(N):
        raise ValueError(f"N must be a power of two >= 2, got {N}")
    rng = streams.stream(seed, streams.BROWNIAN, trial)
    inc = rng.standard_normal((2 * N, 4)) * math.sqrt(1.0 / (2 * N))
    path = np.zeros((2 * N + 1, 4))
    np.cumsum(inc, axis=0, out=path[1:])
    path.flags.writeable = False
    return BrownianGrid(N=N, path=path, seed=seed, trial=trial)


# --------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, fastmath=_FM, error_model="numpy", nogil=True)
def _block_sum(u, a0, a1, v, b0, b1):
    acc = 0.0
    for k in range(a0, a1):
        x0, x1, x2, x3 = u[0, k], u[1, k], u[2, k], u[3, k]
        part = 0.0
        for l in range(b0, b1):
            d0 = v[0, l] - x0
            d1 = v[1, l] - x1
            d2 = v[2, l] - x2
            d3 = v[3, l] - x3
            part += 1.0 / (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3)
        acc += part
    return acc


@numba.njit(cache=True, fastmath=_FM, error_model="numpy", nogil=True)
def _upper_sum(u, n):
    acc = 0.0
    for k in range(n - 1):
        x0, x1, x2, x3 = u[0, k], u[1, k], u[2, k], u[3, k]
        part = 0.0
        for l in range(k + 1, n):
            d0 = u[0, l] - x0
            d1 = u[1, l] - x1
            d2 = u[2, l] - x2
            d3 = u[3, l] - x3
            part += 1.0 / (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3)
        acc += part
    return acc


def _finite(value: float) -> float:
    if not math.isfinite(value):
        raise SingularityError("path points coincide; Green kernel is singular")
    return value


def _square_cells(i: int, j: int, res: int) -> tuple[int, int, int, int]:
    if i < 1 or not 1 <= j <= 1 << (i - 1):
        raise ValueError(f"need i >= 1 and 1 <= j <= 2^(i-1), got ({i}, {j})")
    if (1 << i) > res:
        raise ValueError(f"resolution {res} too coarse for level {i}")
    side = res >> i
    return (2 * j - 2) * side, (2 * j - 1) * side, (2 * j - 1) * side, 2 * j * side


def square_integral(grid: BrownianGrid, i: int, j: int, resolution: int | None = None) -> float:
    """Midpoint Riemann sum of int_{A_{i,j}} G(beta_s, beta_t) ds dt."""
    res = grid.N if resolution is None else resolution
    a0, a1, b0, b1 = _square_cells(i, j, res)
    m = grid.midpoints(res)
    return _finite(_block_sum(m, a0, a1, m, b0, b1)) / (res * res * TWO_PI_SQ)


def square_mean(i: int) -> float:
    """Exact mean of the continuum integral over A_{i,j} (any j)."""
    return MEAN_I11 / 2 ** (i - 1)


def square_riemann_mean(i: int, resolution: int) -> float:
    """Exact mean of the midpoint Riemann sum for A_{i,j} at a given resolution.

    Uses E|beta_t - beta_s|^-2 = 1 / (2 (t - s)) for 4-d Brownian motion.
    """
    side = resolution >> i
    m = np.arange(1, 2 * side)
    count = np.minimum(m, 2 * side - m)
    return float(np.sum(count / (2.0 * m))) / (resolution * TWO_PI_SQ)


@dataclass
class DyadicIntegrals:
    depth: int
    values: dict[tuple[int, int], float]
    means: dict[tuple[int, int], float]

    def level_sum(self, i: int, centered: bool = True) -> float:
        return sum(v - (self.means[k] if centered else 0.0) for k, v in self.values.items() if k[0] == i)


def dyadic_integrals(grid: BrownianGrid, p: int, centering: str = "continuum") -> DyadicIntegrals:
    if (1 << p) > grid.N:
        raise ValueError(f"need 2^p <= N, got p={p}, N={grid.N}")
    values, means = {}, {}
    for i in range(1, p + 1):
        mu = square_mean(i) if centering == "continuum" else square_riemann_mean(i, grid.N)
        for j in range(1, (1 << (i - 1)) + 1):
            values[(i, j)] = square_integral(grid, i, j)
            means[(i, j)] = mu
    return DyadicIntegrals(depth=p, values=values, means=means)


def gamma_partial_sum(grid: BrownianGrid, p: int, centering: str = "continuum") -> float:
    """sum_{i <= p} sum_j (I_{i,j} - E I_{i,j}), the depth-p approximation of gamma_G(C_1).

    gamma_G([0,1]^2) is twice this quantity.
    """
    d = dyadic_integrals(grid, p, centering)
    return sum(d.level_sum(i) for i in range(1, p + 1))


def pair_functional_X(grid1: BrownianGrid, grid2: BrownianGrid) -> float:
    """int_0^1 int_0^1 |beta_s - beta'_t|^-2 ds dt for two independent paths."""
    if grid1.N != grid2.N:
        raise ValueError("grids must share the resolution")
    N = grid1.N
    return _finite(_block_sum(grid1.midpoints(), 0, N, grid2.midpoints(), 0, N)) / (N * N)


def pair_riemann_mean(N: int) -> float:
    """Exact mean of the midpoint Riemann sum of X at resolution N."""
    m = np.arange(2 * N - 1)
    count = np.minimum(m + 1, 2 * N - 1 - m)
    return float(np.sum(count / (2.0 * (m + 1)))) / N


def split_functional(grid: BrownianGrid) -> float:
    """2 int_0^{1/2} int_{1/2}^1 |beta_s - beta_t|^-2 ds dt, equal in law to X."""
    return 2.0 * TWO_PI_SQ * square_integral(grid, 1, 1)


def full_square_sum(grid: BrownianGrid, resolution: int) -> float:
    """Riemann sum of int int_{[0,1]^2} G(beta_s, beta_t) without the diagonal cells."""
    m = grid.midpoints(resolution)
    return 2.0 * _finite(_upper_sum(m, resolution)) / (resolution * resolution * TWO_PI_SQ)


def diagonal_divergence_probe(grid: BrownianGrid, resolutions) -> list[float]:
    return [full_square_sum(grid, int(r)) for r in resolutions]


# --------------------------------------------------------------------------
# batches


def sample_X(trials: int, N: int, seed: int) -> np.ndarray:
    if trials <= 0:
        raise ValueError("trials must be positive")
    return np.array([pair_functional_X(simulate_bm(N, seed, 2 * t), simulate_bm(N, seed, 2 * t + 1)) for t in range(trials)])


def sample_dyadic(trials: int, N: int, p: int, seed: int, centering: str = "continuum") -> list[DyadicIntegrals]:
    return [dyadic_integrals(simulate_bm(N, seed, t), p, centering) for t in range(trials)]


@dataclass
class MomentRow:
    p: int
    moment: float
    ci_low: float
    ci_high: float
    root_over_p: float  # m_p^(1/p) / p
    half_root_over_p: float  # m_p^(1/(2p)) / p


def moment_growth(p_max: int, trials: int, N: int, seed: int, samples: np.ndarray | None = None,
                  n_resamples: int = 1000) -> list[MomentRow]:
    """Empirical moments E[X^p] with percentile bootstrap intervals."""
    if not 1 <= p_max <= 6:
        raise ValueError("p_max must be between 1 and 6")
    x = sample_X(trials, N, seed) if samples is None else np.asarray(samples, dtype=float)
    rows = []
    for p in range(1, p_max + 1):
        xp = x**p
        m = float(xp.mean())
        ci = stats.bootstrap((xp,), np.mean, n_resamples=n_resamples, method="percentile",
                             random_state=streams.stream(seed, streams.BOOTSTRAP, p)).confidence_interval
        rows.append(MomentRow(p, m, float(ci.low), float(ci.high), m ** (1 / p) / p, m ** (1 / (2 * p)) / p))
    return rows
