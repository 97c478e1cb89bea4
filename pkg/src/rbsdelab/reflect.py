"""Reference solutions of reflected BSDEs by clamped dynamic programming.

One barrier gives the Snell-type recursion, two barriers the double-obstacle
clamp.  Reflection is applied after the implicit solve of each step; the
terminal layer carries ``xi`` unclamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _pykernels
from .bsde import implicit_step, run_sweep
from .errors import (
    CapacityError,
    InfeasibleBarriers,
    InvalidConfiguration,
    UnsupportedOracle,
)
from .lattice import MAX_RULE_DEPTH, LatticeModel, path_max_sum, stopping_rule_count
from .processes import GeneratorSpec, ProblemData

FREE, AT_LOWER, AT_UPPER = 0, 1, 2
DEFECT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ReflectedSolution:
    """Clamped solution with per-node reflection increments.

    ``dKplus[i, j]`` is the upward push applied at node ``(i, j)`` and
    ``dKminus`` the downward one; the accumulated processes along a path are
    their running sums.  ``Ytilde`` is the implicit root before clamping.
    """

    lattice: LatticeModel
    Y: np.ndarray
    Z: np.ndarray
    Ytilde: np.ndarray
    dKplus: np.ndarray
    dKminus: np.ndarray
    activity: np.ndarray
    residual: float

    @property
    def Y0(self) -> float:
        return float(self.Y[0, 0])

    @property
    def Kplus_total(self) -> float:
        """``E[K_T]`` for the upward reflection."""
        return self.lattice.expected_sum(self.dKplus)

    @property
    def Kminus_total(self) -> float:
        return self.lattice.expected_sum(self.dKminus)

    # uniform names shared with penalized solutions
    @property
    def lower_increments(self) -> np.ndarray:
        return self.dKplus

    @property
    def upper_increments(self) -> np.ndarray:
        return self.dKminus


def reflected_step(e: float, z: float, gen: GeneratorSpec, t: float, dt: float, dv: float,
                   lower: float | None = None, upper: float | None = None,
                   *, backend: str | None = None) -> tuple[float, float, float]:
    """One clamped step: returns ``(y, dKplus, dKminus)``."""
    if lower is not None and upper is not None and lower > upper:
        raise InfeasibleBarriers(f"lower barrier {lower!r} exceeds upper {upper!r}")
    y_tilde = implicit_step(e, z, gen, t, dt, dv, backend=backend)
    c = y_tilde if lower is None else max(y_tilde, lower)
    y = c if upper is None else min(c, upper)
    return y, c - y_tilde, c - y


def _activity(model, Y, lower, upper, dKplus, dKminus) -> np.ndarray:
    act = np.full(Y.shape, FREE, dtype=np.int8)
    if upper is not None:
        act[Y == upper] = AT_UPPER
    if lower is not None:
        act[Y == lower] = AT_LOWER
    act[dKminus > 0] = AT_UPPER
    act[dKplus > 0] = AT_LOWER
    act[~model.mask] = FREE
    return act


def check_terminal(data: ProblemData, tol: float = 0.0) -> None:
    """Raise unless ``L_N <= xi <= U_N`` at every leaf."""
    N = data.lattice.N
    if data.lower_values is not None:
        bad = np.flatnonzero(data.xi < data.lower_values[N, : N + 1] - tol)
        if bad.size:
            raise InvalidConfiguration(f"terminal value below lower barrier at leaf ({N}, {bad[0]})")
    if data.upper_values is not None:
        bad = np.flatnonzero(data.xi > data.upper_values[N, : N + 1] + tol)
        if bad.size:
            raise InvalidConfiguration(f"terminal value above upper barrier at leaf ({N}, {bad[0]})")


def solve_rbsde(data: ProblemData, *, strict_terminal: bool = False,
                backend: str | None = None) -> ReflectedSolution:
    """Clamped backward recursion for the barriers configured in ``data``."""
    if strict_terminal:
        check_terminal(data)
    model = data.lattice
    Y, Z, Yt, residual = run_sweep(
        data, clamp_lower=data.lower is not None, clamp_upper=data.upper is not None,
        backend=backend)
    interior = model.mask.copy()
    interior[-1] = False
    c = Yt if data.lower_values is None else np.maximum(Yt, data.lower_values)
    dKplus = np.where(interior, c - Yt, 0.0)
    dKminus = np.where(interior, c - Y, 0.0)
    dKplus[~model.mask] = np.nan
    dKminus[~model.mask] = np.nan
    act = _activity(model, Y, data.lower_values, data.upper_values,
                    np.nan_to_num(dKplus), np.nan_to_num(dKminus))
    return ReflectedSolution(model, Y, Z, Yt, dKplus, dKminus, act, residual)


class SkorokhodReport(NamedTuple):
    lower_defect: float
    upper_defect: float
    singularity_ok: bool

    def passed(self, tol: float = DEFECT_TOL) -> bool:
        return self.singularity_ok and self.lower_defect <= tol and self.upper_defect <= tol


def skorokhod_check(sol, data: ProblemData) -> SkorokhodReport:
    """Flat-off defects ``max over paths of sum |Y - L| dK`` (and the upper twin).

    Works for any solution exposing ``Y``, ``lower_increments`` and
    ``upper_increments``; penalized solutions give positive defects.
    """
    model = data.lattice
    dk = np.nan_to_num(sol.lower_increments)
    da = np.nan_to_num(sol.upper_increments)
    lower_defect = upper_defect = 0.0
    if data.lower_values is not None:
        lower_defect = path_max_sum(model, np.abs(sol.Y - data.lower_values) * dk)
    if data.upper_values is not None:
        upper_defect = path_max_sum(model, np.abs(data.upper_values - sol.Y) * da)
    singular = not np.any(model.mask & (dk > 0) & (da > 0))
    return SkorokhodReport(lower_defect, upper_defect, singular)


class JumpReport(NamedTuple):
    plus_residual: float
    minus_residual: float
    snell_residual: float | None
    jump_steps: tuple
    jump_step_residual: float

    def passed(self, tol: float = DEFECT_TOL) -> bool:
        worst = max(self.plus_residual, self.minus_residual, self.snell_residual or 0.0)
        return worst <= tol


def continuation_values(data: ProblemData, Y: np.ndarray) -> np.ndarray:
    """Recompute the pre-clamp implicit roots from ``Y`` (numpy path, backend-independent)."""
    model = data.lattice
    a, b, c, d = data.step_coefficients
    out = model.empty()
    for i in range(model.N):
        e = model.layer_expectation(Y, i)
        z = model.layer_coefficient(Y, i)
        rhs = e + data.dv[i] + model.dt * (b[i] * z + c[i])
        f_e = a[i] * e - d[i] * e ** 3 + b[i] * z + c[i]
        width = abs(data.dv[i]) + model.dt * np.abs(f_e) + 1.0
        n = np.full(i + 1, -np.inf)
        out[i, : i + 1] = _pykernels.solve_layer(rhs, e, width, model.dt, a[i], d[i],
                                                 0.0, n, 0.0, -n)
    return out


def jump_formula_check(sol: ReflectedSolution, data: ProblemData) -> JumpReport:
    """Verify the discrete jump relations of the reflecting processes.

    ``dKplus_i = (L_i - y~_i)^+`` and ``dKminus_i = (max(y~_i, L_i) - U_i)^+``
    with ``y~_i`` recomputed from ``Y_{i+1}``.  For time-only generators the
    Snell relation ``Y_i = U_i ^ (L_i v (E_i Y_{i+1} + f_i dt + dV_i))`` is
    checked as well.
    """
    model = data.lattice
    N = model.N
    yt = continuation_values(data, sol.Y)[:-1]
    L = data.lower_values[:-1] if data.lower_values is not None else np.full(yt.shape, -np.inf)
    U = data.upper_values[:-1] if data.upper_values is not None else np.full(yt.shape, np.inf)
    mask = model.mask[:-1]
    plus = np.maximum(L - yt, 0.0)
    minus = np.maximum(np.maximum(yt, L) - U, 0.0)
    res_plus = np.abs(sol.dKplus[:-1] - plus)
    res_minus = np.abs(sol.dKminus[:-1] - minus)

    snell = None
    res_snell = np.zeros(yt.shape)
    if data.generator.exogenous:
        _, _, c, _ = data.step_coefficients
        cont = np.full(yt.shape, np.nan)
        for i in range(N):
            cont[i, : i + 1] = model.layer_expectation(sol.Y, i) + c[i] * model.dt + data.dv[i]
        res_snell = np.abs(sol.Y[:-1] - np.minimum(U, np.maximum(L, cont)))
        snell = float(np.max(res_snell[mask]))

    jumps = np.zeros(N + 1)
    for spec in (data.driver, data.lower, data.upper):
        if spec is not None:
            jumps += np.abs(spec.jump_sizes(model))
    # a jump at t_k enters the step taken at t_{k-1} and the clamp at t_k
    ks = np.flatnonzero(jumps > 0)
    steps = tuple(sorted({int(s) for k in ks for s in (k - 1, k) if 0 <= s < N}))
    worst = np.maximum(np.maximum(res_plus, res_minus), res_snell)
    at_jumps = max((float(np.nanmax(worst[i, : i + 1])) for i in steps), default=0.0)
    return JumpReport(float(np.max(res_plus[mask])), float(np.max(res_minus[mask])),
                      snell, steps, at_jumps)


def snell_bruteforce(data: ProblemData) -> float:
    """Maximum over every stopping rule of the expected stopped payoff.

    The value of each rule is formed explicitly (no maximisation happens
    before the final ``max``): a rule at a node either stops, or continues and
    combines one rule from each child subtree.
    """
    model = data.lattice
    N = model.N
    if N > MAX_RULE_DEPTH:
        raise CapacityError(f"depth {N} has {stopping_rule_count(N)} stopping rules")
    if data.upper is not None or data.lower is None:
        raise UnsupportedOracle("brute-force oracle needs exactly one lower barrier")
    if not data.generator.exogenous:
        raise UnsupportedOracle("brute-force oracle needs a generator independent of (y, z)")
    _, _, c, _ = data.step_coefficients
    L = data.lower_values
    layer = [np.array([x]) for x in data.xi]
    for i in range(N - 1, -1, -1):
        running = c[i] * model.dt + data.dv[i]
        new = []
        for j in range(i + 1):
            cont = running + 0.5 * (layer[j + 1][:, None] + layer[j][None, :]).ravel()
            new.append(np.concatenate(([L[i, j]], cont)))
        layer = new
    values = layer[0]
    assert values.size == stopping_rule_count(N)
    return float(values.max())


def snell_by_rules(data: ProblemData, rules) -> float:
    """Evaluate each rule path by path (slow; for cross-checking small depths)."""
    from .lattice import all_paths, path_up_counts

    model = data.lattice
    N = model.N
    _, _, c, _ = data.step_coefficients
    running = np.concatenate(([0.0], np.cumsum(c * model.dt + data.dv)))
    paths = all_paths(N)
    ups = path_up_counts(paths)
    best = -math.inf
    for rule in rules:
        total = 0.0
        for path, j in zip(paths, ups):
            tau = rule.stopping_step(path)
            payoff = data.xi[j[N]] if tau == N else data.lower_values[tau, j[tau]]
            total += running[tau] + payoff
        best = max(best, total / len(paths))
    return best
