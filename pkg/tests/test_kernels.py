import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdelab import _pykernels, kernels
from rbsdelab.errors import NumericError

from oracles import bisect

HAS_COMPILED = "compiled" in kernels.BACKENDS


def test_python_backend_always_available():
    assert "python" in kernels.BACKENDS
    assert kernels.active_backend() in kernels.BACKENDS


def test_set_backend_validates():
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")
    prev = kernels.active_backend()
    kernels.set_backend("python")
    try:
        assert kernels.get() is _pykernels
    finally:
        kernels.set_backend(prev)


@pytest.mark.parametrize("backend", sorted(kernels.BACKENDS))
@settings(max_examples=200, deadline=None)
@given(rhs=st.floats(-50, 50), a=st.floats(-5, 0.9), d=st.floats(0, 5),
       n=st.floats(0, 1e4), L=st.floats(-3, 3), m=st.floats(0, 1e4), gap=st.floats(0, 3))
def test_solve_root_matches_bisection(backend, rhs, a, d, n, L, m, gap):
    dt, U = 0.5, L + gap
    y = kernels.solve_root(rhs, 0.0, 1.0, dt, a, d, n, L, m, U, backend=backend)

    def g(v):
        return _pykernels._g(v, dt, a, d, n, L, m, U) - rhs

    ref = bisect(g, -1.0, 1.0)
    assert abs(y - ref) <= 1e-13 * max(1.0, abs(ref))


def test_absent_barriers_as_infinities(backend):
    y = kernels.solve_root(1.0, 0.0, 1.0, 0.1, 0.0, 0.0, 5.0, -math.inf, 5.0, math.inf,
                           backend=backend)
    assert y == pytest.approx(1.0, abs=1e-14)


def test_large_penalty_kink_terminates(backend):
    # residual floor from rounding exceeds the step tolerance; bracket width ends it
    y = kernels.solve_root(0.0, 0.0, 1.0, 0.5, 0.0, 0.0, 569.0, 1.0, 0.0, math.inf,
                           backend=backend)
    assert y == pytest.approx(284.5 / 285.5, abs=1e-15)


def test_overflowing_bracket_raises(backend):
    with pytest.raises(NumericError):
        kernels.solve_root(1e308, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, -math.inf, 0.0, math.inf,
                           backend=backend)


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled extension not built")
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_backends_agree_on_sweeps(N, seed):
    rng = np.random.default_rng(seed)
    dt = 1.0 / N
    xi = np.ascontiguousarray(rng.normal(size=N + 1))
    a = np.ascontiguousarray(rng.uniform(-1, 0.5, N))
    b, c = rng.uniform(-1, 1, N), rng.uniform(-1, 1, N)
    d, dv = rng.uniform(0, 1, N), rng.uniform(-0.1, 0.1, N)
    lower = np.ascontiguousarray(np.tril(rng.normal(size=(N + 1, N + 1))) - 0.5)
    upper = np.ascontiguousarray(lower + 1.0)
    args = (xi, dt, math.sqrt(dt), a, b, c, d, dv, lower, upper, 50.0, 20.0, True, False)
    out_py = kernels.sweep(*args, backend="python")
    out_c = kernels.sweep(*args, backend="compiled")
    for x, y in zip(out_py[:3], out_c[:3]):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-13)
