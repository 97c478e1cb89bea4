"""Time the compiled and numpy sweep kernels on the bundled problem shapes.

Usage::

    python benchmarks/bench_kernels.py [--sizes 50 200 800] [--repeat 5]

Each row reports the best wall time over ``--repeat`` runs and the largest
nodewise difference between the two backends' ``Y``.
"""

import argparse
import timeit

import numpy as np

from rbsdelab import kernels
from rbsdelab.lattice import build_lattice
from rbsdelab.penalty import solve_penalized
from rbsdelab.processes import Constant, FunctionOfState, GeneratorSpec, ProblemData
from rbsdelab.reflect import solve_rbsde

PUT = FunctionOfState(expr="max(1 - exp(0.2*B + (0.05 - 0.02)*t), 0)")


def cases(N):
    model = build_lattice(1.0, N)
    put = ProblemData(model, PUT, GeneratorSpec.linear(a=-0.05), lower=PUT)
    cubic = ProblemData(model, FunctionOfState(expr="max(B, 0)"), GeneratorSpec.monotone_poly(0.0),
                        lower=FunctionOfState(expr="0.25*(1 - t) + 0.1*B"))
    corridor = ProblemData(model, FunctionOfState(expr="0.2*sin(B)"), GeneratorSpec.linear(b=0.3),
                           lower=Constant(value=-0.2), upper=Constant(value=0.2))
    yield "put reflected", lambda b: solve_rbsde(put, backend=b)
    yield "put penalized n=1e4", lambda b: solve_penalized(put, 1e4, backend=b)
    yield "cubic penalized n=1e3", lambda b: solve_penalized(cubic, 1e3, backend=b)
    yield "corridor two-sided", lambda b: solve_penalized(corridor, 1e3, 1e3, backend=b)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[50, 200, 800])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    if "compiled" not in backends:
        print("compiled kernels unavailable; timing the numpy fallback only")
    header = f"{'case':24s} {'N':>5s} " + " ".join(f"{b + ' [ms]':>14s}" for b in backends)
    print(header + f" {'speedup':>8s} {'max |dY|':>10s}")
    for N in args.sizes:
        for name, run in cases(N):
            times = {b: min(timeit.repeat(lambda: run(b), number=1, repeat=args.repeat))
                     for b in backends}
            row = f"{name:24s} {N:5d} " + " ".join(f"{1e3 * times[b]:14.3f}" for b in backends)
            if len(backends) == 2:
                diff = float(np.nanmax(np.abs(run("compiled").Y - run("python").Y)))
                row += f" {times['python'] / times['compiled']:8.1f} {diff:10.2e}"
            print(row)


if __name__ == "__main__":
    main()
