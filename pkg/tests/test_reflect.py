import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rbsdelab.bsde import solve_bsde
from rbsdelab.cli.suite import random_ordered_pair, random_snell_instance
from rbsdelab.errors import (
    CapacityError,
    InfeasibleBarriers,
    InvalidConfiguration,
    UnsupportedOracle,
)
from rbsdelab.lattice import build_lattice, enumerate_stopping_rules
from rbsdelab.processes import (
    Constant,
    DeterministicTime,
    FunctionOfState,
    GeneratorSpec,
    ProblemData,
)
from rbsdelab.reflect import (
    AT_LOWER,
    AT_UPPER,
    FREE,
    ReflectedSolution,
    jump_formula_check,
    reflected_step,
    skorokhod_check,
    snell_bruteforce,
    snell_by_rules,
    solve_rbsde,
)

from conftest import PUT_PARAMS, american_put
from oracles import classic_american_put, layers_to_array, naive_backward

ZERO = GeneratorSpec.linear()


def linear_ramp(N=2):
    model = build_lattice(1.0, N)
    lower = DeterministicTime(knots=((0.0, 1.0), (1.0, 0.0)))
    return ProblemData(model, Constant(value=0.0), ZERO, lower=lower)


# -- single step ---------------------------------------------------------------


@pytest.mark.parametrize("e, lower, upper, expected", [
    (0.5, 0.7, None, (0.7, 0.2, 0.0)),
    (1.5, 0.0, 1.0, (1.0, 0.0, 0.5)),
    (0.5, 0.0, 1.0, (0.5, 0.0, 0.0)),
])
def test_reflected_step_examples(e, lower, upper, expected, backend):
    # f = 0, dv = 0: the implicit root is e itself
    y, kp, km = reflected_step(e, 0.0, ZERO, 0.0, 0.1, 0.0, lower, upper, backend=backend)
    assert (y, kp, km) == pytest.approx(expected, abs=1e-15)


def test_reflected_step_rejects_crossed_barriers():
    with pytest.raises(InfeasibleBarriers):
        reflected_step(0.0, 0.0, ZERO, 0.0, 0.1, 0.0, 1.0, 0.0)


@given(e=st.floats(-5, 5), lo=st.floats(-5, 5), width=st.floats(0, 5))
def test_reflected_step_is_median(e, lo, width):
    y, kp, km = reflected_step(e, 0.0, ZERO, 0.0, 0.1, 0.0, lo, lo + width)
    assert y == sorted([e, lo, lo + width])[1]
    assert kp >= 0 and km >= 0 and kp * km == 0


# -- full solve ----------------------------------------------------------------


def test_no_barriers_equals_bsde():
    model = build_lattice(1.0, 12)
    data = ProblemData(model, FunctionOfState(expr="sin(B) + t"),
                       GeneratorSpec.monotone_poly(0.0, c=0.3))
    r, b = solve_rbsde(data), solve_bsde(data)
    assert np.array_equal(r.Y, b.Y, equal_nan=True)
    assert r.Kplus_total == 0.0 and r.Kminus_total == 0.0


def test_linear_ramp_stops_immediately():
    sol = solve_rbsde(linear_ramp())
    assert sol.Y0 == 1.0
    assert sol.activity[0, 0] == AT_LOWER


def test_american_put_matches_classic_tree():
    for N in (10, 50):
        sol = solve_rbsde(american_put(N))
        ref = classic_american_put(1.0, PUT_PARAMS["K"], PUT_PARAMS["r"],
                                   PUT_PARAMS["sigma"], 1.0, N)
        assert abs(sol.Y0 - ref) <= 1e-12


def test_one_barrier_matches_naive_recursion():
    N, r = 8, 0.05
    data = american_put(N)
    L = data.lower_values
    ref = naive_backward(list(data.xi), 1.0, lambda t: (-r, 0.0, 0.0, 0.0),
                         lower=lambda i, j: L[i, j], clamp=True)
    sol = solve_rbsde(data)
    np.testing.assert_allclose(sol.Y, layers_to_array(ref), atol=1e-14)


def test_two_barrier_matches_naive_recursion(rng):
    d1, _ = random_ordered_pair(rng, "two_barrier", N=10)
    a, b, c, d = (np.asarray(v) for v in d1.step_coefficients)
    dt = d1.lattice.dt
    L, U = d1.lower_values, d1.upper_values
    ref = naive_backward(list(d1.xi), 1.0, lambda t: (a[round(t / dt)], b[round(t / dt)],
                                                      c[round(t / dt)], d[round(t / dt)]),
                         dv=list(d1.dv), lower=lambda i, j: L[i, j],
                         upper=lambda i, j: U[i, j], clamp=True)
    np.testing.assert_allclose(solve_rbsde(d1).Y, layers_to_array(ref), atol=1e-12)


def test_barriers_respected_exactly(rng):
    for kind in ("one_barrier", "two_barrier"):
        for _ in range(5):
            data, _ = random_ordered_pair(rng, kind)
            sol = solve_rbsde(data)
            inner = data.lattice.mask.copy()
            inner[-1] = False
            assert np.all(sol.Y[inner] >= data.lower_values[inner])
            if data.upper is not None:
                assert np.all(sol.Y[inner] <= data.upper_values[inner])


def test_terminal_not_clamped_unless_strict():
    model = build_lattice(1.0, 2)
    data = ProblemData(model, Constant(value=0.0), ZERO, lower=Constant(value=1.0))
    sol = solve_rbsde(data)
    assert np.all(sol.Y[2, :3] == 0.0)
    assert sol.Y0 == 1.0
    with pytest.raises(InvalidConfiguration, match="below lower barrier"):
        solve_rbsde(data, strict_terminal=True)


def test_repeat_runs_bitwise_identical():
    data = american_put(30)
    a, b = solve_rbsde(data), solve_rbsde(data)
    assert np.array_equal(a.Y, b.Y, equal_nan=True)
    assert np.array_equal(a.dKplus, b.dKplus, equal_nan=True)


def test_activity_flags():
    model = build_lattice(1.0, 4)
    data = ProblemData(model, FunctionOfState(expr="B"), ZERO,
                       lower=Constant(value=-0.5), upper=Constant(value=0.5))
    sol = solve_rbsde(data)
    act = sol.activity
    assert set(np.unique(act)) <= {FREE, AT_LOWER, AT_UPPER}
    assert np.all(act[np.nan_to_num(sol.dKplus) > 0] == AT_LOWER)
    assert np.all(act[np.nan_to_num(sol.dKminus) > 0] == AT_UPPER)


@pytest.mark.parametrize("kind", ["one_barrier", "two_barrier"])
def test_comparison_randomized(kind, rng):
    for _ in range(25):
        d1, d2 = random_ordered_pair(rng, kind)
        y1, y2 = solve_rbsde(d1).Y, solve_rbsde(d2).Y
        assert np.nanmax(y1 - y2) <= 1e-10


# -- Skorokhod -----------------------------------------------------------------


def test_skorokhod_oracle_defects_vanish(rng):
    for kind in ("one_barrier", "two_barrier"):
        data, _ = random_ordered_pair(rng, kind)
        rep = skorokhod_check(solve_rbsde(data), data)
        assert rep.lower_defect == 0.0 and rep.upper_defect == 0.0
        assert rep.singularity_ok and rep.passed()


def test_skorokhod_negative_control():
    data = american_put(10)
    sol = solve_rbsde(data)
    free = np.argwhere(data.lattice.mask[:-1] & (sol.Y[:-1] > data.lower_values[:-1] + 0.01))
    i, j = free[0]
    dk = sol.dKplus.copy()
    dk[i, j] += 0.1
    bad = ReflectedSolution(sol.lattice, sol.Y, sol.Z, sol.Ytilde, dk, sol.dKminus,
                            sol.activity, sol.residual)
    rep = skorokhod_check(bad, data)
    assert rep.lower_defect >= 0.1 * 0.01
    assert not rep.passed()


def test_skorokhod_singularity_violation_detected():
    model = build_lattice(1.0, 2)
    data = ProblemData(model, Constant(value=0.0), ZERO,
                       lower=Constant(value=0.0), upper=Constant(value=0.0))
    sol = solve_rbsde(data)
    dk, da = sol.dKplus.copy(), sol.dKminus.copy()
    dk[0, 0] = da[0, 0] = 0.5
    bad = ReflectedSolution(sol.lattice, sol.Y, sol.Z, sol.Ytilde, dk, da,
                            sol.activity, sol.residual)
    assert not skorokhod_check(bad, data).singularity_ok


# -- jump formulas -------------------------------------------------------------


def test_jump_formula_driver_jump():
    model = build_lattice(1.0, 10)
    driver = DeterministicTime(values=(0.0,) * 11, jumps=((0.5, -0.3),))
    data = ProblemData(model, FunctionOfState(expr="B"), ZERO, driver, lower=Constant(value=-0.2))
    sol = solve_rbsde(data)
    rep = jump_formula_check(sol, data)
    assert rep.passed() and rep.jump_step_residual <= 1e-12
    assert rep.jump_steps == (4, 5)
    # direct recomputation at the jump step: Y = L v (E + dV)
    i = 4
    E = 0.5 * (sol.Y[i + 1, 1: i + 2] + sol.Y[i + 1, : i + 1])
    np.testing.assert_allclose(sol.Y[i, : i + 1], np.maximum(-0.2, E - 0.3), atol=1e-15)


def test_jump_formula_without_jumps():
    data = american_put(20)
    rep = jump_formula_check(solve_rbsde(data), data)
    assert rep.jump_steps == () and rep.passed()


def test_jump_formula_upper_barrier_jump():
    model = build_lattice(1.0, 10)
    upper = Constant(value=0.4, jumps=((0.6, -0.3),))
    data = ProblemData(model, FunctionOfState(expr="0.1*B"), GeneratorSpec.linear(a=-0.1, c=0.2),
                       lower=Constant(value=-0.5), upper=upper)
    sol = solve_rbsde(data)
    assert np.nansum(sol.dKminus) > 0
    rep = jump_formula_check(sol, data)
    assert rep.minus_residual <= 1e-12 and rep.jump_step_residual <= 1e-12


def test_jump_formula_nonexogenous_skips_snell():
    model = build_lattice(1.0, 6)
    data = ProblemData(model, FunctionOfState(expr="B"), GeneratorSpec.monotone_poly(0.0),
                       lower=Constant(value=0.0))
    rep = jump_formula_check(solve_rbsde(data), data)
    assert rep.snell_residual is None and rep.passed()


# -- Snell oracle --------------------------------------------------------------


def test_snell_inactive_barrier_is_expectation():
    model = build_lattice(1.0, 4)
    gen = GeneratorSpec.linear(c=0.25)
    driver = DeterministicTime(knots=((0.0, 0.0), (1.0, 0.5)))
    data = ProblemData(model, FunctionOfState(expr="B**2"), gen, driver,
                       lower=Constant(value=-1e6))
    # E[B_T^2] + c T + V_T
    assert snell_bruteforce(data) == pytest.approx(1.0 + 0.25 + 0.5, abs=1e-12)


def test_snell_linear_ramp():
    data = linear_ramp()
    assert snell_bruteforce(data) == 1.0
    assert snell_by_rules(data, enumerate_stopping_rules(2)) == 1.0


def test_snell_abs_brownian_equals_dp():
    model = build_lattice(1.0, 3)
    data = ProblemData(model, FunctionOfState(expr="abs(B)"), ZERO, lower=Constant(value=0.0))
    assert abs(snell_bruteforce(data) - solve_rbsde(data).Y0) <= 1e-12
    assert abs(snell_by_rules(data, enumerate_stopping_rules(3)) - solve_rbsde(data).Y0) <= 1e-12


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(1, 5))
def test_snell_random_equals_dp(seed, N):
    data = random_snell_instance(np.random.default_rng(seed), N)
    assert abs(snell_bruteforce(data) - solve_rbsde(data).Y0) <= 1e-12


def test_snell_capacity_and_support():
    with pytest.raises(CapacityError):
        snell_bruteforce(linear_ramp(6))
    model = build_lattice(1.0, 2)
    base = ProblemData(model, Constant(value=0.0), ZERO, lower=Constant(value=0.0))
    with pytest.raises(UnsupportedOracle):
        snell_bruteforce(base.replace(upper=Constant(value=1.0)))
    with pytest.raises(UnsupportedOracle):
        snell_bruteforce(base.replace(lower=None))
    with pytest.raises(UnsupportedOracle):
        snell_bruteforce(base.replace(generator=GeneratorSpec.monotone_poly(0.0)))


def test_snell_rule_count_small():
    assert math.isclose(snell_bruteforce(linear_ramp(1)), 1.0)
