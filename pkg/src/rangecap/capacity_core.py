"""Exact equilibrium measures and the capacity decomposition on finite sets.

For a finite A the equilibrium weights e_A(y) = P_y(H_A^+ = inf) solve
(G_d restricted to A) e = 1, and Cap(A) = sum_y e_A(y).

Cross and overlap terms use the convention

    chi(A, B) = sum_{y in A \\ B} sum_{z in B} e_{A u B}(y) G_d(y, z) e_B(z),
    eps(A, B) = sum_{y in A n B} e_{A u B}(y),

under which Cap(A u B) = Cap A + Cap B - chi(A, B) - chi(B, A) - eps(A, B)
holds exactly for the solved linear systems, and 0 <= eps <= Cap(A n B).
Restricting y to A \\ B matters only when the sets overlap.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .errors import CapabilityError, NumericError
from .green_kernel import GreenTable, default_table
from .lattice_walk import FiniteLatticeSet, WalkPath, dyadic_segments, range_of

log = logging.getLogger(__name__)

SOLVER_CAP = 4096
WEIGHT_SLACK = 1e-8
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class EquilibriumMeasure:
    set: FiniteLatticeSet
    weights: np.ndarray = field(repr=False)
    capacity: float
    residual: float
    condition: float

    def weight(self, y) -> float:
        return float(self.weights[self.set.index_of(y)[0]])

    def reported_weights(self) -> np.ndarray:
        """Weights clipped to [0, 1]; the solve already rejected anything beyond the slack."""
        return np.clip(self.weights, 0.0, 1.0)


def _solve(A: FiniteLatticeSet, gram: np.ndarray) -> EquilibriumMeasure:
    n = len(A)
    try:
        factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericError(f"Green matrix of a {n}-point set is not positive definite") from exc
    ones = np.ones(n)
    e = linalg.cho_solve(factor, ones, check_finite=False)
    anorm = np.abs(gram).sum(axis=0).max()
    rcond, info = linalg.lapack.dpocon(factor[0], anorm, uplo="L")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > MAX_CONDITION:
        raise NumericError(f"Green matrix is ill-conditioned (condition estimate {cond:.3e})")
    residual = float(np.abs(gram @ e - 1.0).max())
    if e.min() < -WEIGHT_SLACK or e.max() > 1.0 + WEIGHT_SLACK:
        raise NumericError(f"equilibrium weights outside [0, 1]: min {e.min():.3e}, max {e.max():.3e}")
    e.flags.writeable = False
    return EquilibriumMeasure(set=A, weights=e, capacity=float(e.sum()), residual=residual, condition=float(cond))


def _check_size(A: FiniteLatticeSet, cap: int) -> None:
    if len(A) == 0:
        raise ValueError("set must be nonempty")
    if len(A) > cap:
        raise CapabilityError(f"|A| = {len(A)} exceeds the exact solver cap {cap}; use capacity_mc")


def equilibrium_measure(A: FiniteLatticeSet, table: GreenTable | None = None, max_size: int = SOLVER_CAP) -> EquilibriumMeasure:
    _check_size(A, max_size)
    table = table or default_table()
    return _solve(A, table.matrix(A.points))


def capacity(A: FiniteLatticeSet, table: GreenTable | None = None, max_size: int = SOLVER_CAP) -> float:
    return equilibrium_measure(A, table, max_size).capacity


def escape_probability(A: FiniteLatticeSet, y, table: GreenTable | None = None) -> float:
    if y not in A:
        raise ValueError(f"{tuple(np.asarray(y).tolist())} is not in the set")
    return equilibrium_measure(A, table).weight(y)


class _Workspace:
    """Green matrix of a base set plus cached solves on subsets of it."""

    def __init__(self, base: FiniteLatticeSet, table: GreenTable, max_size: int = SOLVER_CAP):
        _check_size(base, max_size)
        self.base = base
        self.gram = table.matrix(base.points)
        self._solves: dict[bytes, tuple[np.ndarray, EquilibriumMeasure]] = {}

    def idx(self, S: FiniteLatticeSet) -> np.ndarray:
        return np.searchsorted(self.base.keys, S.keys)

    def solve(self, S: FiniteLatticeSet) -> tuple[np.ndarray, EquilibriumMeasure]:
        h = S.keys.tobytes()
        if h not in self._solves:
            if len(S) == 0:
                raise ValueError("set must be nonempty")
            ix = self.idx(S)
            self._solves[h] = (ix, _solve(S, self.gram[np.ix_(ix, ix)]))
        return self._solves[h]

    def chi(self, A: FiniteLatticeSet, B: FiniteLatticeSet) -> float:
        only_a = A - B
        if len(only_a) == 0:
            return 0.0
        U = A | B
        ix_u, eq_u = self.solve(U)
        ix_b, eq_b = self.solve(B)
        ix_a = self.idx(only_a)
        e_u = eq_u.weights[np.searchsorted(ix_u, ix_a)]
        return float(e_u @ (self.gram[np.ix_(ix_a, ix_b)] @ eq_b.weights))

    def epsilon(self, A: FiniteLatticeSet, B: FiniteLatticeSet) -> float:
        both = A & B
        if len(both) == 0:
            return 0.0
        ix_u, eq_u = self.solve(A | B)
        return float(eq_u.weights[np.searchsorted(ix_u, self.idx(both))].sum())


def chi(A: FiniteLatticeSet, B: FiniteLatticeSet, table: GreenTable | None = None) -> float:
    ws = _Workspace(A | B, table or default_table())
    return ws.chi(A, B)


def epsilon_term(A: FiniteLatticeSet, B: FiniteLatticeSet, table: GreenTable | None = None) -> float:
    if len(A & B) == 0:
        return 0.0
    ws = _Workspace(A | B, table or default_table())
    return ws.epsilon(A, B)


@dataclass
class DecompositionReport:
    capA: float
    capB: float
    capUnion: float
    chiAB: float
    chiBA: float
    epsilon: float
    residual: float
    sizeA: int = 0
    sizeB: int = 0
    sizeIntersection: int = 0
    seed: int | None = None
    max_solve_residual: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def verify_decomposition(A: FiniteLatticeSet, B: FiniteLatticeSet, table: GreenTable | None = None, seed: int | None = None) -> DecompositionReport:
    ws = _Workspace(A | B, table or default_table())
    _, ea = ws.solve(A)
    _, eb = ws.solve(B)
    _, eu = ws.solve(A | B)
    c_ab, c_ba, eps = ws.chi(A, B), ws.chi(B, A), ws.epsilon(A, B)
    residual = abs(eu.capacity - (ea.capacity + eb.capacity - c_ab - c_ba - eps))
    return DecompositionReport(
        capA=ea.capacity, capB=eb.capacity, capUnion=eu.capacity,
        chiAB=c_ab, chiBA=c_ba, epsilon=eps, residual=residual,
        sizeA=len(A), sizeB=len(B), sizeIntersection=len(A & B), seed=seed,
        max_solve_residual=max(ea.residual, eb.residual, eu.residual),
    )


@dataclass
class DyadicCrossTerms:
    """Capacities of the 2^p pieces, the cross terms chi_n(i, j), and the overlap terms."""

    n: int
    depth: int
    cap_total: float
    leaf_caps: list[float]
    chi: dict[tuple[int, int], float]
    eps_split: dict[tuple[int, int], float]
    eps_n: float
    residual: float

    def chi_level(self, i: int) -> float:
        return sum(v for (lvl, _), v in self.chi.items() if lvl == i)


def dyadic_cross_terms(path: WalkPath, p: int, table: GreenTable | None = None, max_size: int = SOLVER_CAP) -> DyadicCrossTerms:
    """Iterate the two-set decomposition down the dyadic splits of R[0, n].

    ``eps_n`` is defined by the identity itself (sum of leaf capacities minus
    the cross terms minus Cap R_n). ``residual`` compares it with the sum of the
    per-split overlap terms computed in closed form, so it is a genuine check.
    """
    table = table or default_table()
    full = range_of(path)
    if len(full) > max_size:
        raise CapabilityError(f"|R_n| = {len(full)} exceeds the exact solver cap {max_size}; use capacity_mc")
    ws = _Workspace(full, table, max_size)
    levels = [dyadic_segments(path, i) for i in range(p + 1)]
    chi_terms: dict[tuple[int, int], float] = {}
    eps_split: dict[tuple[int, int], float] = {}
    for i in range(1, p + 1):
        for j in range(1, (1 << (i - 1)) + 1):
            left, right = levels[i][2 * j - 2], levels[i][2 * j - 1]
            chi_terms[(i, j)] = ws.chi(left, right) + ws.chi(right, left)
            eps_split[(i, j)] = ws.epsilon(left, right)
    cap_total = ws.solve(full)[1].capacity
    leaf_caps = [ws.solve(s)[1].capacity for s in levels[p]]
    eps_n = sum(leaf_caps) - sum(chi_terms.values()) - cap_total
    residual = abs(eps_n - sum(eps_split.values()))
    if eps_n < -1e-8:
        log.warning("negative overlap term eps_n = %.3e", eps_n)
    return DyadicCrossTerms(
        n=path.n, depth=p, cap_total=cap_total, leaf_caps=leaf_caps,
        chi=chi_terms, eps_split=eps_split, eps_n=eps_n, residual=residual,
    )
