import numpy as np
import pytest

from rbsdelab import kernels
from rbsdelab.lattice import build_lattice
from rbsdelab.processes import FunctionOfState, GeneratorSpec, ProblemData

PUT = "max(K - exp(sigma*B + (r - sigma**2/2)*t), 0)"
PUT_PARAMS = {"K": 1.0, "sigma": 0.2, "r": 0.05}


def put_payoff():
    return FunctionOfState(expr=PUT, params=PUT_PARAMS)


def american_put(N=50, T=1.0, r=0.05, **kw):
    model = build_lattice(T, N)
    payoff = FunctionOfState(expr=PUT, params=dict(PUT_PARAMS, r=r))
    return ProblemData(model, payoff, GeneratorSpec.linear(a=-r), lower=payoff, **kw)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"{'PASS' if passed else 'FAIL'} criterion {number:2d}: {title} ({detail})")
