from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangecap import lattice_walk as lw
from rangecap.errors import LatticeBoundsError, ResourceError
from rangecap.green_kernel import default_table

coords = st.integers(-(1 << 15) + 1, (1 << 15) - 1)
points = st.lists(st.tuples(coords, coords, coords, coords), min_size=0, max_size=40)
small_points = st.lists(st.tuples(*[st.integers(-3, 3)] * 4), min_size=0, max_size=30)


def test_zero_steps_is_origin():
    path = lw.simulate_walk(0, seed=11)
    assert path.n == 0
    assert path.steps.tolist() == [[0, 0, 0, 0]]
    R = lw.range_of(path)
    assert len(R) == 1 and (0, 0, 0, 0) in R


def test_same_seed_same_path():
    a = lw.simulate_walk(10**6, seed=7)
    b = lw.simulate_walk(10**6, seed=7)
    assert np.array_equal(a.steps, b.steps)
    assert not np.array_equal(a.steps, lw.simulate_walk(10**6, seed=8).steps)


def test_walk_index_streams_are_independent_and_prefix_consistent():
    a = lw.simulate_walk(3 * lw.STEP_BLOCK, seed=3, walk_index=0)
    b = lw.simulate_walk(3 * lw.STEP_BLOCK, seed=3, walk_index=1)
    assert not np.array_equal(a.steps, b.steps)
    short = lw.simulate_walk(lw.STEP_BLOCK + 17, seed=3, walk_index=0)
    assert np.array_equal(short.steps, a.steps[: short.n + 1])


def test_mean_square_displacement():
    n, walks = 10**4, 10**4
    ends = np.array([lw.simulate_walk(n, seed=5, walk_index=w).steps[-1] for w in range(walks)], dtype=float)
    ratio = (ends**2).sum(axis=1).mean() / n
    assert abs(ratio - 1.0) < 0.03


def test_unit_increments_and_origin():
    path = lw.simulate_walk(50_000, seed=1)
    d = np.abs(np.diff(path.steps.astype(int), axis=0)).sum(axis=1)
    assert np.all(d == 1)
    assert np.all(path.steps[0] == 0)


def test_increment_isotropy():
    path = lw.simulate_walk(10**6, seed=2)
    inc = np.diff(path.steps.astype(int), axis=0)
    code = np.argmax(np.abs(inc), axis=1) * 2 + (inc.sum(axis=1) < 0)
    freq = np.bincount(code, minlength=8) / len(inc)
    sigma = math.sqrt(0.125 * 0.875 / len(inc))
    assert np.all(np.abs(freq - 0.125) < 4 * sigma)


def test_range_fraction_matches_non_return_probability():
    # |R_n| / n tends to the escape probability 1 / G_d(0) in d = 4
    n, walks = 10**5, 50
    sizes = np.array([len(lw.range_of(lw.simulate_walk(n, seed=4, walk_index=w))) for w in range(walks)])
    frac = sizes.mean() / n
    assert abs(frac - 1.0 / default_table().origin_value) < 0.02
    # the capacity-scale reference (pi^2/8) n / log n is a different quantity; logged only
    print("range size / ((pi^2/8) n / log n) =", sizes.mean() / (math.pi**2 / 8 * n / math.log(n)))


def test_range_of_bounds_and_singletons():
    path = lw.simulate_walk(20, seed=9)
    assert lw.range_of(path, 7, 7) == lw.FiniteLatticeSet([path.point(7)])
    with pytest.raises(ValueError):
        lw.range_of(path, 5, 21)
    with pytest.raises(ValueError):
        lw.range_of(path, 6, 5)
    with pytest.raises(ValueError):
        lw.range_of(path, -1, 3)


def test_range_sizes_monotone():
    path = lw.simulate_walk(5000, seed=12)
    sizes = [len(lw.range_of(path, 0, m)) for m in range(0, 5001, 250)]
    assert sizes == sorted(sizes)


def test_dyadic_examples():
    path = lw.simulate_walk(10, seed=1)
    assert lw.dyadic_segments(path, 0) == [lw.range_of(path)]
    left, right = lw.dyadic_segments(path, 1)
    assert left == lw.range_of(path, 0, 5) and right == lw.range_of(path, 5, 10)
    assert left | right == lw.range_of(path, 0, 10)
    assert lw.dyadic_bounds(10, 2) == [(0, 2), (2, 5), (5, 7), (7, 10)]


def test_dyadic_union_p3():
    path = lw.simulate_walk(1 << 12, seed=2)
    segs = lw.dyadic_segments(path, 3)
    assert len(segs) == 8
    assert lw.union_all(segs) == lw.range_of(path)
    for j, (lo, hi) in enumerate(lw.dyadic_bounds(path.n, 3)[:-1]):
        assert path.point(hi) in segs[j] and path.point(hi) in segs[j + 1]


def test_dyadic_errors():
    path = lw.simulate_walk(8, seed=1)
    with pytest.raises(ValueError):
        lw.dyadic_segments(path, -1)
    with pytest.raises(ValueError):
        lw.dyadic_segments(path, 4)


@given(st.integers(0, 300), st.integers(0, 2**32), st.integers(0, 8))
def test_union_property(n, seed, p):
    path = lw.simulate_walk(n, seed)
    if p and (1 << p) > n:
        with pytest.raises(ValueError):
            lw.dyadic_segments(path, p)
        return
    assert lw.union_all(lw.dyadic_segments(path, p)) == lw.range_of(path)


@given(points)
def test_pack_roundtrip(pts):
    arr = np.array(pts, dtype=np.int64).reshape(-1, 4)
    assert np.array_equal(lw.unpack(lw.pack(arr)), arr)


@given(small_points, small_points)
def test_set_algebra_matches_python_sets(a, b):
    A, B = lw.FiniteLatticeSet(a), lw.FiniteLatticeSet(b)
    sa, sb = set(a), set(b)
    assert set(A) == sa and len(A) == len(sa)
    assert set(A | B) == sa | sb
    assert set(A & B) == sa & sb
    assert set(A - B) == sa - sb
    assert (A & B).issubset(A)
    assert list(A) == sorted(A, key=lambda p: int(lw.pack(p)[0]))


@given(small_points, st.tuples(*[st.integers(-50, 50)] * 4))
def test_translate_and_contains(a, shift):
    A = lw.FiniteLatticeSet(a)
    T = A.translate(shift)
    assert len(T) == len(A)
    for p in a:
        assert tuple(np.add(p, shift)) in T


def test_membership_outside_box_is_false():
    A = lw.FiniteLatticeSet([[0, 0, 0, 0]])
    assert not A.contains([[1 << 15, 0, 0, 0]])[0]


def test_bounds_and_budget_errors():
    with pytest.raises(LatticeBoundsError):
        lw.FiniteLatticeSet([[1 << 15, 0, 0, 0]])
    with pytest.raises(ResourceError):
        lw.simulate_walk(lw.MAX_STEPS + 1, seed=0)
    with pytest.raises(ValueError):
        lw.simulate_walk(-1, seed=0)


def test_center_and_radius():
    A = lw.FiniteLatticeSet([[0, 0, 0, 0]])
    assert A.radius() == 1.0
    B = lw.FiniteLatticeSet([[-3, 0, 0, 0], [3, 0, 0, 0]])
    assert B.center().tolist() == [0, 0, 0, 0] and B.radius() == 4.0


def test_binary_and_csv_export(tmp_path):
    path = lw.simulate_walk(100, seed=3)
    path.to_binary(tmp_path / "w.bin")
    assert (tmp_path / "w.bin").stat().st_size == 101 * 4 * 2
    back = lw.WalkPath.from_binary(tmp_path / "w.bin")
    assert np.array_equal(back.steps, path.steps)
    path.to_csv(tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "step,x1,x2,x3,x4" and len(lines) == 102
    assert lines[1] == "0,0,0,0,0"


def test_random_box_set():
    rng = np.random.default_rng(0)
    A = lw.random_box_set(rng, 30, 2, center=(5, 5, 5, 5))
    assert len(A) == 30
    assert np.all(np.abs(A.points - 5) <= 2)
    with pytest.raises(ValueError):
        lw.random_box_set(rng, 100, 1)
