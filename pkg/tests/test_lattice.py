import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdelab.errors import CapacityError, InvalidConfiguration, OutOfRange
from rbsdelab.lattice import (
    StoppingRule,
    TimeGrid,
    all_paths,
    along_paths,
    build_lattice,
    conditional_expectation,
    enumerate_stopping_rules,
    martingale_coefficient,
    path_max_sum,
    stopping_rule_count,
)


def test_build_single_step():
    m = build_lattice(1.0, 1)
    assert m.node_count == 3
    assert m.brownian_value((1, 1)) == 1.0
    assert m.brownian_value((1, 0)) == -1.0
    assert m.brownian_value((0, 0)) == 0.0


def test_brownian_symmetry_and_scale():
    assert build_lattice(1.0, 4).brownian_value((4, 2)) == 0.0
    assert build_lattice(0.5, 2).brownian_value((2, 2)) == 1.0


@pytest.mark.parametrize("T, N", [(0.0, 3), (-1.0, 3), (1.0, 0), (math.inf, 2)])
def test_build_rejects_bad_grid(T, N):
    with pytest.raises(InvalidConfiguration):
        build_lattice(T, N)


def test_grid_times_end_exactly_at_horizon():
    g = TimeGrid(0.7, 3)
    assert g.times[-1] == 0.7
    assert np.all(np.diff(g.times) > 0)
    np.testing.assert_allclose(np.diff(g.times), g.dt, rtol=1e-15, atol=1e-16)
    assert g.index_of(g.times[2]) == 2
    with pytest.raises(InvalidConfiguration, match="off grid"):
        g.index_of(0.33)


def test_node_count_and_mask():
    m = build_lattice(1.0, 7)
    assert m.node_count == 8 * 9 // 2
    assert m.mask.sum() == m.node_count
    assert np.isnan(m.brownian[2, 3])


def test_brownian_zero_mean_and_unit_variance_one_step():
    m = build_lattice(2.0, 9)
    B = m.brownian
    for i in range(m.N):
        up, down = B[i + 1, 1 : i + 2], B[i + 1, : i + 1]
        np.testing.assert_array_equal(0.5 * (up + down), B[i, : i + 1])
        var = 0.5 * ((up - B[i, : i + 1]) ** 2 + (down - B[i, : i + 1]) ** 2)
        np.testing.assert_allclose(var, m.dt, rtol=1e-14)


def test_conditional_expectation_examples():
    m = build_lattice(1.0, 4)
    assert conditional_expectation(m, (0, 0), (2.0, 0.0)) == 1.0
    assert conditional_expectation(m, (2, 1), (0.3, 0.3)) == 0.3
    B = m.brownian
    for i in range(m.N):
        for j in range(i + 1):
            assert conditional_expectation(m, (i, j), (B[i + 1, j + 1], B[i + 1, j])) == B[i, j]


def test_martingale_coefficient_examples():
    m = build_lattice(1.0, 4)
    B = m.brownian
    for i in range(m.N):
        for j in range(i + 1):
            z = martingale_coefficient(m, (i, j), (B[i + 1, j + 1], B[i + 1, j]))
            assert z == pytest.approx(1.0, abs=1e-15)
    assert martingale_coefficient(m, (1, 0), (0.4, 0.4)) == 0.0
    assert martingale_coefficient(m, (0, 0), (3.0, 1.0)) == 2.0  # dt = 0.25


def test_terminal_node_has_no_successors():
    m = build_lattice(1.0, 2)
    with pytest.raises(OutOfRange):
        conditional_expectation(m, (2, 1), (0.0, 0.0))
    with pytest.raises(OutOfRange):
        martingale_coefficient(m, (2, 0), (0.0, 0.0))
    with pytest.raises(OutOfRange):
        m.check_node((1, 2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_tower_property_matches_path_average(k, seed):
    m = build_lattice(1.0, k)
    vals = np.random.default_rng(seed).normal(size=k + 1)
    X = m.empty()
    X[k, : k + 1] = vals
    acc = vals
    for i in range(k - 1, -1, -1):
        acc = 0.5 * (acc[1:] + acc[:-1])
    paths = all_paths(k)
    path_avg = along_paths(X, paths)[:, -1].mean()
    assert acc[0] == pytest.approx(path_avg, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2),
       st.lists(st.floats(0, 5), min_size=2, max_size=2))
def test_expectation_linear_and_monotone(v, bump):
    m = build_lattice(1.0, 3)
    e1 = conditional_expectation(m, (1, 0), v)
    e2 = conditional_expectation(m, (1, 0), (v[0] + bump[0], v[1] + bump[1]))
    assert e1 <= e2
    e3 = conditional_expectation(m, (1, 0), (2 * v[0], 2 * v[1]))
    assert e3 == pytest.approx(2 * e1, abs=1e-12)


@pytest.mark.parametrize("N, count", [(0, 1), (1, 2), (2, 5), (3, 26), (4, 677)])
def test_stopping_rule_count(N, count):
    assert stopping_rule_count(N) == count
    assert sum(1 for _ in enumerate_stopping_rules(N)) == count


def test_stopping_rule_count_depth_five_by_recursion():
    f = 1
    for _ in range(5):
        f = 1 + f * f
    assert stopping_rule_count(5) == f == 458330


def test_enumeration_capacity():
    with pytest.raises(CapacityError, match=str(stopping_rule_count(6))):
        next(enumerate_stopping_rules(6))


def test_rules_are_cuts_every_path_stops_once():
    N = 3
    rules = list(enumerate_stopping_rules(N))
    assert len({r.stop_set for r in rules}) == len(rules)
    for rule in rules:
        for path in all_paths(N):
            path = tuple(int(x) for x in path)
            hits = [k for k in range(N + 1) if path[:k] in rule.stop_set]
            assert len(hits) == 1
            assert rule.stopping_step(path) == hits[0]


def test_rule_flags():
    rule = StoppingRule(2, frozenset({(1,), (0, 0), (0, 1)}))
    assert rule.flag(()) is False
    assert rule.flag((1,)) is True
    assert rule.flag((1, 0)) is None
    assert rule.flag((0, 1)) is True


def test_path_helpers_capacity():
    with pytest.raises(CapacityError):
        all_paths(13)
    assert all_paths(3).shape == (8, 3)


def test_path_max_sum_matches_enumeration(rng):
    m = build_lattice(1.0, 8)
    terms = np.where(m.mask, rng.normal(size=m.mask.shape), np.nan)
    brute = np.nansum(along_paths(terms, all_paths(8)), axis=1).max()
    assert path_max_sum(m, terms) == pytest.approx(brute, abs=1e-12)


def test_probabilities_sum_to_one():
    m = build_lattice(1.0, 20)
    np.testing.assert_allclose(np.nansum(m.probabilities, axis=1), 1.0, rtol=1e-14)
