"""Implicit backward solver for BSDE(xi, f + dV) and the comparison checker."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidComparison, NumericError, StabilityError
from .lattice import LatticeModel
from .processes import GeneratorSpec, ProblemData

COMPARISON_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class BSDESolution:
    """Node arrays ``Y`` and ``Z`` (``Z`` is NaN on the terminal layer)."""

    lattice: LatticeModel
    Y: np.ndarray
    Z: np.ndarray
    residual: float

    @property
    def Y0(self) -> float:
        return float(self.Y[0, 0])


def implicit_step(e: float, z: float, gen: GeneratorSpec, t: float, dt: float, dv: float,
                  *, backend: str | None = None) -> float:
    """Solve ``y = e + f(t, y, z) dt + dv`` for ``y``.

    ``y - dt f(t, y, z)`` is strictly increasing when ``dt * max(mu, 0) < 1``,
    so the root is unique.
    """
    if dt * max(gen.mu, 0.0) >= 1.0:
        raise StabilityError(f"dt * max(mu, 0) = {dt * max(gen.mu, 0.0)!r} >= 1")
    if not all(math.isfinite(v) for v in (e, z, t, dt, dv)):
        raise NumericError("non-finite input to implicit_step")
    a, b, c, d = (float(v) for v in gen.coefficients(t))
    rhs = e + dv + dt * (b * z + c)
    width = abs(dv) + dt * abs(float(gen(t, e, z))) + 1.0
    return kernels.solve_root(rhs, e, width, dt, a, d, 0.0, -math.inf, 0.0, math.inf,
                              backend=backend)


def barrier_arrays(data: ProblemData) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous barrier node arrays with ``-inf`` / ``+inf`` for absent barriers."""
    shape = (data.lattice.N + 1, data.lattice.N + 1)
    lower = (np.full(shape, -np.inf) if data.lower_values is None
             else np.where(data.lattice.mask, data.lower_values, -np.inf))
    upper = (np.full(shape, np.inf) if data.upper_values is None
             else np.where(data.lattice.mask, data.upper_values, np.inf))
    return np.ascontiguousarray(lower), np.ascontiguousarray(upper)


def run_sweep(data: ProblemData, *, pen_lower: float = 0.0, pen_upper: float = 0.0,
              clamp_lower: bool = False, clamp_upper: bool = False,
              backend: str | None = None):
    """Dispatch one backward sweep to the active kernel backend."""
    model = data.lattice
    lower, upper = barrier_arrays(data)
    a, b, c, d = data.step_coefficients
    return kernels.sweep(
        data.xi, model.dt, model.sqrt_dt, a, b, c, d, data.dv, lower, upper,
        float(pen_lower), float(pen_upper), bool(clamp_lower), bool(clamp_upper),
        backend=backend,
    )


def solve_bsde(data: ProblemData, *, backend: str | None = None) -> BSDESolution:
    """Solve the non-reflected equation; barriers in ``data`` are ignored."""
    Y, Z, _, residual = run_sweep(data.replace(lower=None, upper=None), backend=backend)
    return BSDESolution(data.lattice, Y, Z, residual)


class ComparisonReport(NamedTuple):
    applicable: bool
    holds: bool | None
    worst_gap: float
    failed_hypotheses: tuple


def _interior(model: LatticeModel, arr: np.ndarray) -> np.ndarray:
    return arr[:-1][model.mask[:-1]]


def comparison_hypotheses(sol1, data1: ProblemData, data2: ProblemData,
                          tol: float = 1e-12) -> list[str]:
    """Names of ordering hypotheses that fail for the pair ``(data1, data2)``."""
    model = data1.lattice
    failed = []
    if np.any(data1.xi > data2.xi + tol):
        failed.append("terminal")
    if np.any(data1.dv > data2.dv + tol):
        failed.append("driver")
    t = model.time_grid
    f1 = data1.generator(t, sol1.Y, sol1.Z)
    f2 = data2.generator(t, sol1.Y, sol1.Z)
    if np.any(_interior(model, f1) > _interior(model, f2) + tol * (1 + np.abs(_interior(model, f2)))):
        failed.append("generator")
    if max(data1.generator.lam, data2.generator.lam) * model.sqrt_dt > 1.0:
        failed.append("lattice_monotonicity")
    # absent lower = -inf, absent upper = +inf
    L1, L2 = data1.lower_values, data2.lower_values
    if L1 is not None and (L2 is None or np.any(model.valid(L1) > model.valid(L2) + tol)):
        failed.append("lower")
    U1, U2 = data1.upper_values, data2.upper_values
    if U2 is not None and (U1 is None or np.any(model.valid(U1) > model.valid(U2) + tol)):
        failed.append("upper")
    return failed


def check_comparison(sol1, sol2, data1: ProblemData, data2: ProblemData) -> ComparisonReport:
    """Test ``Y1 <= Y2`` at every node after verifying the ordering hypotheses.

    The generator hypothesis ``f1(t, Y1, Z1) <= f2(t, Y1, Z1)`` is checked at
    every interior node.  Barriers, when present, must be ordered the same
    way.  A failed hypothesis gives ``applicable=False``.
    """
    if data1.lattice.grid != data2.lattice.grid or sol1.Y.shape != sol2.Y.shape:
        raise InvalidComparison("solutions live on different lattices")
    model = data1.lattice
    gap = float(np.max(model.valid(sol1.Y - sol2.Y)))
    failed = tuple(comparison_hypotheses(sol1, data1, data2))
    if failed:
        return ComparisonReport(False, None, gap, failed)
    return ComparisonReport(True, gap <= COMPARISON_TOL, gap, ())
