from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangecap import capacity_core as cc
from rangecap import lattice_walk as lw
from rangecap.errors import CapabilityError, NumericError

ORIGIN = (0, 0, 0, 0)
E1 = (1, 0, 0, 0)
PLAQUETTE_CAP = 4.074966838995973  # 3x3x1x1 plaquette, frozen from the exact solve

small_sets = st.lists(st.tuples(*[st.integers(-4, 4)] * 4), min_size=1, max_size=25)


def S(*pts) -> lw.FiniteLatticeSet:
    return lw.FiniteLatticeSet(list(pts))


def test_singleton(table):
    eq = cc.equilibrium_measure(S(ORIGIN), table)
    assert eq.capacity == pytest.approx(1 / table.origin_value, abs=1e-12)
    assert eq.weight(ORIGIN) == pytest.approx(0.80679, abs=1e-5)
    assert cc.capacity(S((17, -4, 2, 9)), table) == pytest.approx(eq.capacity, abs=1e-14)


def test_pair_closed_form(table):
    eq = cc.equilibrium_measure(S(ORIGIN, E1), table)
    w = 1 / (table.origin_value + table.value(E1))
    assert np.allclose(eq.weights, w, atol=1e-14)
    assert eq.capacity == pytest.approx(2 * w, abs=1e-12)
    assert eq.capacity < 2 * cc.capacity(S(ORIGIN), table)


def test_frozen_plaquette(table):
    P = lw.FiniteLatticeSet([(a, b, 0, 0) for a in range(3) for b in range(3)])
    eq = cc.equilibrium_measure(P, table)
    assert eq.capacity == pytest.approx(PLAQUETTE_CAP, rel=1e-10)
    assert eq.weight((0, 0, 0, 0)) > eq.weight((1, 1, 0, 0))


def test_deep_interior_escape(table):
    pts = np.array(list(np.ndindex(11, 11, 11, 11))) - 5
    ball = lw.FiniteLatticeSet(pts[(pts**2).sum(axis=1) <= 25])
    e0 = cc.escape_probability(ball, ORIGIN, table)
    print(f"|ball| = {len(ball)}, interior escape = {e0:.3e}")
    assert e0 < 0.5


def test_escape_requires_membership(table):
    with pytest.raises(ValueError):
        cc.escape_probability(S(ORIGIN), E1, table)


def test_errors(table):
    with pytest.raises(ValueError):
        cc.capacity(lw.FiniteLatticeSet(), table)
    with pytest.raises(CapabilityError):
        cc.capacity(lw.random_box_set(np.random.default_rng(0), 30, 3), table, max_size=20)
    with pytest.raises(NumericError):
        cc._solve(S(ORIGIN, E1), np.ones((2, 2)))
    with pytest.raises(NumericError):
        cc._solve(S(ORIGIN, E1), np.array([[1.0, 0.0], [0.0, 1e-14]]))


@given(small_sets)
def test_equilibrium_invariants(pts):
    A = lw.FiniteLatticeSet(pts)
    eq = cc.equilibrium_measure(A)
    assert eq.residual < 1e-8
    assert eq.weights.min() >= -1e-10 and eq.weights.max() <= 1 + 1e-10
    assert eq.capacity == pytest.approx(eq.weights.sum())
    assert eq.capacity <= len(A) + 1e-12
    np.testing.assert_array_equal(eq.reported_weights(), np.clip(eq.weights, 0, 1))


@given(small_sets, st.tuples(*[st.integers(-3000, 3000)] * 4))
def test_translation_invariance(pts, shift):
    A = lw.FiniteLatticeSet(pts)
    assert cc.capacity(A.translate(shift)) == pytest.approx(cc.capacity(A), abs=1e-10)


@given(small_sets, small_sets)
def test_monotone_in_nested_sets(a, b):
    A = lw.FiniteLatticeSet(a)
    B = A | lw.FiniteLatticeSet(b)
    assert cc.capacity(A) <= cc.capacity(B) + 1e-12


def test_monotone_100_random_nested_pairs(table):
    rng = np.random.default_rng(17)
    for _ in range(100):
        B = lw.random_box_set(rng, int(rng.integers(2, 40)), 3)
        A = lw.FiniteLatticeSet(B.points[rng.random(len(B)) < 0.5]) or B
        if len(A) == 0:
            continue
        assert cc.capacity(A, table) <= cc.capacity(B, table) + 1e-12


def test_chi_singletons_closed_form(table):
    x = (3, 1, 0, 2)
    A, B = S(ORIGIN), S(x)
    e_u = cc.equilibrium_measure(A | B, table).weight(ORIGIN)
    e_b = cc.equilibrium_measure(B, table).weight(x)
    assert cc.chi(A, B, table) == pytest.approx(e_u * table.value(x) * e_b, rel=1e-13)


@given(small_sets, small_sets)
def test_chi_nonnegative_and_decomposition(a, b):
    A, B = lw.FiniteLatticeSet(a), lw.FiniteLatticeSet(b)
    r = cc.verify_decomposition(A, B)
    assert r.chiAB >= 0 and r.chiBA >= 0
    assert r.residual < 1e-8
    assert 0 <= r.epsilon <= (cc.capacity(A & B) if len(A & B) else 0.0) * (1 + 1e-10)
    assert r.capUnion <= r.capA + r.capB + 1e-12
    s = cc.verify_decomposition(B, A)
    assert s.chiAB + s.chiBA == pytest.approx(r.chiAB + r.chiBA, rel=1e-12, abs=1e-14)
    assert s.epsilon == pytest.approx(r.epsilon, rel=1e-12, abs=1e-14)


def test_chi_decays_like_inverse_square(table):
    rng = np.random.default_rng(3)
    A = lw.random_box_set(rng, 12, 1)
    B0 = lw.random_box_set(rng, 12, 1)
    vals = [cc.chi(A, B0.translate((d, 0, 0, 0)), table) for d in (8, 16, 32)]
    for a, b in zip(vals, vals[1:]):
        assert abs(a / b / 4 - 1) < 0.3


def test_epsilon_disjoint_is_zero(table):
    assert cc.epsilon_term(S(ORIGIN), S(E1), table) == 0.0


def test_b_equal_a(table):
    A = lw.random_box_set(np.random.default_rng(5), 20, 2)
    r = cc.verify_decomposition(A, A, table)
    assert r.chiAB == 0 and r.chiBA == 0
    assert r.epsilon == pytest.approx(r.capA, rel=1e-12)
    assert r.residual < 1e-8


def test_far_singletons(table):
    x = (60, 0, 0, 0)
    r = cc.verify_decomposition(S(ORIGIN), S(x), table)
    c0 = cc.capacity(S(ORIGIN), table)
    chi_approx = c0**2 * table.value(x)
    assert r.chiAB == pytest.approx(chi_approx, rel=1e-3)
    assert r.capUnion == pytest.approx(2 * c0 - 2 * r.chiAB, abs=1e-12)
    assert r.residual < 1e-8


def test_random_pairs_in_radius10_box(table):
    rng = np.random.default_rng(8)
    overlaps = 0
    for k in range(100):
        A = lw.random_box_set(rng, int(rng.integers(1, 31)), 1 if k % 2 else 10)
        B = lw.random_box_set(rng, int(rng.integers(1, 31)), 1 if k % 2 else 10)
        r = cc.verify_decomposition(A, B, table)
        overlaps += r.sizeIntersection > 0
        assert r.residual < 1e-8
        if r.sizeIntersection == 0:
            assert r.epsilon == 0.0
    assert overlaps >= 30


def test_report_json(table):
    r = cc.verify_decomposition(S(ORIGIN, E1), S(E1, (2, 0, 0, 0)), table, seed=4)
    d = json.loads(r.to_json())
    assert {"capA", "capB", "capUnion", "chiAB", "chiBA", "epsilon", "residual", "sizeA", "sizeB", "seed"} <= set(d)
    assert d["residual"] == pytest.approx(abs(d["capUnion"] - (d["capA"] + d["capB"] - d["chiAB"] - d["chiBA"] - d["epsilon"])), abs=1e-15)


def test_dyadic_p1_closure(table):
    path = lw.simulate_walk(1 << 10, seed=6)
    d = cc.dyadic_cross_terms(path, 1, table)
    left, right = lw.dyadic_segments(path, 1)
    lhs = d.cap_total + d.chi[(1, 1)] + d.eps_n
    assert abs(lhs - (cc.capacity(left, table) + cc.capacity(right, table))) < 1e-8
    assert d.residual < 1e-8


def test_dyadic_p0(table):
    path = lw.simulate_walk(300, seed=6)
    d = cc.dyadic_cross_terms(path, 0, table)
    assert d.chi == {} and d.eps_n == pytest.approx(0, abs=1e-12)
    assert d.cap_total == pytest.approx(cc.capacity(lw.range_of(path), table), rel=1e-14)


def test_dyadic_levels_and_eps_sign(table):
    path = lw.simulate_walk(1 << 11, seed=9)
    d = cc.dyadic_cross_terms(path, 3, table)
    assert set(d.chi) == {(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (3, 3), (3, 4)}
    assert all(v > 0 for v in d.chi.values())
    assert d.eps_n >= -1e-8 and d.residual < 1e-8
    assert d.chi_level(2) == pytest.approx(d.chi[(2, 1)] + d.chi[(2, 2)])


def test_dyadic_capability_error(table):
    path = lw.simulate_walk(2000, seed=1)
    with pytest.raises(CapabilityError):
        cc.dyadic_cross_terms(path, 1, table, max_size=100)
