"""Penalization approximations of one- and two-barrier reflected equations."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .bsde import BSDESolution, run_sweep
from .errors import InvalidConfiguration
from .lattice import LatticeModel
from .processes import GeneratorSpec, ProblemData, ProcessSpec
from .reflect import ReflectedSolution, skorokhod_check

MONOTONE_TOL = 1e-12
SANDWICH_TOL = 1e-10


@dataclass(frozen=True)
class PenaltySchedule:
    """Increasing penalty levels ``(n, m)``; ``m`` is None when unused."""

    levels: tuple

    def __post_init__(self):
        levels = tuple((float(n), None if m is None else float(m)) for n, m in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise InvalidConfiguration("penalty schedule needs at least one level")
        ns = [n for n, _ in levels]
        if any(n <= 0 for n in ns):
            raise InvalidConfiguration("penalty levels must be positive")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise InvalidConfiguration("penalty levels n must be strictly increasing")
        ms = [m for _, m in levels if m is not None]
        if ms and len(ms) != len(levels):
            raise InvalidConfiguration("either every level sets m or none does")
        if any(m <= 0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise InvalidConfiguration("penalty levels m must be positive and strictly increasing")

    @classmethod
    def geometric(cls, n0: float, count: int, ratio: float = 2.0, diagonal: bool = False):
        ns = [n0 * ratio**k for k in range(count)]
        return cls(tuple((n, n if diagonal else None) for n in ns))

    def __len__(self):
        return len(self.levels)


class PenalizedGenerator:
    """``f(t, y, z) + n (y - L)^- - m (y - U)^+`` evaluated at given barrier values.

    Both penalty terms are nonincreasing in ``y``, so ``mu`` and ``lam`` carry
    over from the base generator.
    """

    def __init__(self, base: GeneratorSpec, n: float, m: float,
                 lower: ProcessSpec | None, upper: ProcessSpec | None):
        self.base, self.n, self.m = base, float(n), float(m)
        self.lower, self.upper = lower, upper
        self.mu, self.lam = base.mu, base.lam

    def __call__(self, t, y, z, L=None, U=None):
        out = self.base(t, y, z)
        if self.n > 0:
            out = out + self.n * np.maximum(L - y, 0.0)
        if self.m > 0:
            out = out - self.m * np.maximum(y - U, 0.0)
        return out


def penalized_generator(gen: GeneratorSpec, n: float, m: float = 0.0,
                        lower: ProcessSpec | None = None,
                        upper: ProcessSpec | None = None) -> PenalizedGenerator:
    if n < 0 or m < 0:
        raise InvalidConfiguration("penalty coefficients must be nonnegative")
    if n > 0 and lower is None:
        raise InvalidConfiguration("positive lower penalty needs a lower barrier")
    if m > 0 and upper is None:
        raise InvalidConfiguration("positive upper penalty needs an upper barrier")
    return PenalizedGenerator(gen, n, m, lower, upper)


@dataclass(frozen=True, eq=False)
class PenalizedSolution:
    """Solution of the penalized equation with penalty increments per node.

    ``dK[i, j] = dt n (Y - L)^-`` and ``dA[i, j] = dt m (Y - U)^+`` at interior
    nodes, using the solved ``Y`` at the node.
    """

    base: BSDESolution
    dK: np.ndarray
    dA: np.ndarray
    level: tuple

    @property
    def lattice(self) -> LatticeModel:
        return self.base.lattice

    @property
    def Y(self) -> np.ndarray:
        return self.base.Y

    @property
    def Z(self) -> np.ndarray:
        return self.base.Z

    @property
    def Y0(self) -> float:
        return self.base.Y0

    @property
    def K_total(self) -> float:
        return self.lattice.expected_sum(self.dK)

    @property
    def A_total(self) -> float:
        return self.lattice.expected_sum(self.dA)

    @property
    def lower_increments(self) -> np.ndarray:
        return self.dK

    @property
    def upper_increments(self) -> np.ndarray:
        return self.dA


def _check_penalties(data: ProblemData, n: float, m: float) -> None:
    penalized_generator(data.generator, n, m, data.lower, data.upper)


def _increments(data: ProblemData, Y: np.ndarray, n: float, m: float):
    model = data.lattice
    interior = model.mask.copy()
    interior[-1] = False
    dK = np.where(model.mask, 0.0, np.nan)
    dA = dK.copy()
    if n > 0:
        dK[interior] = (model.dt * n * np.maximum(data.lower_values - Y, 0.0))[interior]
    if m > 0:
        dA[interior] = (model.dt * m * np.maximum(Y - data.upper_values, 0.0))[interior]
    return dK, dA


def solve_penalized(data: ProblemData, n: float, m: float = 0.0, *,
                    reflect_lower: bool = False, reflect_upper: bool = False,
                    backend: str | None = None) -> PenalizedSolution:
    """Solve the penalized equation with the penalty inside the implicit step.

    ``reflect_lower`` / ``reflect_upper`` additionally clamp on that barrier,
    giving the one-sided penalized-and-reflected equations used by
    :func:`sandwich_check`.
    """
    m = 0.0 if m is None else float(m)
    _check_penalties(data, n, m)
    if (reflect_lower and data.lower is None) or (reflect_upper and data.upper is None):
        raise InvalidConfiguration("reflection requested on an absent barrier")
    Y, Z, _, residual = run_sweep(data, pen_lower=n, pen_upper=m, clamp_lower=reflect_lower,
                                  clamp_upper=reflect_upper, backend=backend)
    dK, dA = _increments(data, Y, n, m)
    return PenalizedSolution(BSDESolution(data.lattice, Y, Z, residual), dK, dA, (float(n), m))


class MonotonicityReport(NamedTuple):
    holds: bool
    worst_violation: float
    pairs_checked: int


class LevelError(NamedTuple):
    sup_error: float
    Y0_error: float
    K_error: float
    A_error: float


@dataclass(frozen=True, eq=False)
class PenalizationRun:
    schedule: PenaltySchedule
    solutions: tuple
    monotonicity: MonotonicityReport
    defects: tuple
    errors_vs_oracle: tuple | None
    oracle: ReflectedSolution | None

    def table(self) -> list[dict]:
        rows = []
        for k, (sol, defect) in enumerate(zip(self.solutions, self.defects)):
            n, m = sol.level
            if m == 0.0 and self.schedule.levels[k][1] is None:
                m = None  # no upper penalty in play
            err = self.errors_vs_oracle[k].sup_error if self.errors_vs_oracle else None
            rows.append({
                "level_index": k, "n": n, "m": m, "Y0": sol.Y0,
                "sup_error_vs_oracle": err, "K_total": sol.K_total, "A_total": sol.A_total,
                "lower_defect": defect.lower_defect, "upper_defect": defect.upper_defect,
            })
        return rows


def _effective_m(data: ProblemData, m):
    return 0.0 if (m is None or data.upper is None) else m


def monotonicity_report(data: ProblemData, solutions: Sequence[PenalizedSolution],
                        tol: float = MONOTONE_TOL) -> MonotonicityReport:
    """Check ``Y^k <= Y^l`` for every comparable pair (``n_k <= n_l`` and ``m_k >= m_l``)."""
    model = data.lattice
    worst, pairs = -np.inf, 0
    for k, sk in enumerate(solutions):
        nk, mk = sk.level
        for sl in solutions[k + 1:]:
            nl, ml = sl.level
            if nk <= nl and mk >= ml:
                lo, hi = sk, sl
            elif nk >= nl and mk <= ml:
                lo, hi = sl, sk
            else:
                continue
            pairs += 1
            worst = max(worst, float(np.max(model.valid(lo.Y - hi.Y))))
    if pairs == 0:
        return MonotonicityReport(True, 0.0, 0)
    return MonotonicityReport(worst <= tol, worst, pairs)


def level_error(sol: PenalizedSolution, oracle: ReflectedSolution) -> LevelError:
    model = sol.lattice
    return LevelError(float(np.max(np.abs(model.valid(sol.Y - oracle.Y)))),
                      abs(sol.Y0 - oracle.Y0),
                      abs(sol.K_total - oracle.Kplus_total),
                      abs(sol.A_total - oracle.Kminus_total))


def run_schedule(data: ProblemData, schedule: PenaltySchedule,
                 oracle: ReflectedSolution | None = None, *, workers: int = 1,
                 backend: str | None = None) -> PenalizationRun:
    """Solve every level, verify penalty monotonicity and measure errors."""
    two_sided = data.lower is not None and data.upper is not None

    def one(level):
        n, m = level
        if two_sided and m is None:
            m = n
        if data.lower is None:
            # upper barrier only: the schedule's n drives the upper penalty
            return solve_penalized(data, 0.0, n, backend=backend)
        return solve_penalized(data, n, _effective_m(data, m), backend=backend)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            solutions = tuple(pool.map(one, schedule.levels))
    else:
        solutions = tuple(one(level) for level in schedule.levels)
    mono = monotonicity_report(data, solutions)
    defects = tuple(skorokhod_check(s, data) for s in solutions)
    errors = None
    if oracle is not None:
        errors = tuple(level_error(s, oracle) for s in solutions)
    return PenalizationRun(schedule, solutions, mono, defects, errors, oracle)


class SandwichReport(NamedTuple):
    holds: bool
    lower_gap: float
    upper_gap: float
    Y_bar: np.ndarray
    Y_diag: np.ndarray
    Y_under: np.ndarray


def sandwich_check(data: ProblemData, n: float, *, backend: str | None = None) -> SandwichReport:
    """Order ``Ybar^n <= Y^{n,n} <= Yunder^n`` nodewise.

    ``Ybar^n`` penalizes the lower barrier and reflects on the upper one;
    ``Yunder^n`` does the opposite.
    """
    if data.lower is None or data.upper is None:
        raise InvalidConfiguration("sandwich check needs both barriers")
    model = data.lattice
    y_bar = solve_penalized(data, n, 0.0, reflect_upper=True, backend=backend).Y
    y_diag = solve_penalized(data, n, n, backend=backend).Y
    y_under = solve_penalized(data, 0.0, n, reflect_lower=True, backend=backend).Y
    lower_gap = float(np.max(model.valid(y_bar - y_diag)))
    upper_gap = float(np.max(model.valid(y_diag - y_under)))
    holds = lower_gap <= SANDWICH_TOL and upper_gap <= SANDWICH_TOL
    return SandwichReport(holds, lower_gap, upper_gap, y_bar, y_diag, y_under)
