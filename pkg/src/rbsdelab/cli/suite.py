"""Seeded random instances and the invariant battery behind ``suite`` mode."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..bsde import check_comparison, implicit_step, solve_bsde
from ..diagnostics import apriori_audit, class_d_norm, convexity_residual, mokobodzki_check
from ..lattice import build_lattice
from ..penalty import MONOTONE_TOL, PenaltySchedule, run_schedule, sandwich_check
from ..processes import DeterministicTime, FunctionOfState, GeneratorSpec, ProblemData
from ..reflect import jump_formula_check, skorokhod_check, snell_bruteforce, solve_rbsde

DEFAULT_SCHEDULE = PenaltySchedule.geometric(10.0, 8)
PAIR_KINDS = ("bsde", "one_barrier", "two_barrier")


# -- random instances ----------------------------------------------------------


def _generator(rng, shift: float = 0.0, base=None) -> GeneratorSpec:
    if base is None:
        if rng.random() < 0.5:
            base = ("linear", rng.uniform(-1.0, 0.5), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5))
        else:
            base = ("monotone_poly", rng.uniform(-1.0, 0.5), 0.0, rng.uniform(-0.5, 0.5))
    form, a, b, c = base
    if form == "linear":
        return GeneratorSpec.linear(a, b, c + shift), base
    return GeneratorSpec.monotone_poly(a, c + shift), base


def _grid_time(rng, N: int, T: float) -> float:
    return T * int(rng.integers(1, N + 1)) / N


def random_ordered_pair(rng: np.random.Generator, kind: str, N: int = 20, T: float = 1.0):
    """Two problems on one lattice with data ordered so that ``Y1 <= Y2`` must hold."""
    if kind not in PAIR_KINDS:
        raise ValueError(f"unknown pair kind {kind!r}")
    model = build_lattice(T, N)
    gen1, base = _generator(rng)
    gen2, _ = _generator(rng, shift=rng.uniform(0.0, 0.3), base=base)

    x0, x1, x2 = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5)
    xi_expr = "x0 + x1*B + x2*max(B, 0)"
    xi1 = FunctionOfState(expr=xi_expr, params=dict(x0=x0, x1=x1, x2=x2))
    xi2 = FunctionOfState(expr=xi_expr + " + dx + dy*sin(B)**2",
                          params=dict(x0=x0, x1=x1, x2=x2, dx=rng.uniform(0, 0.3),
                                      dy=rng.uniform(0, 0.3)))

    slope, jump_t, jump = rng.uniform(-0.5, 0.5), _grid_time(rng, N, T), rng.uniform(-0.2, 0.2)
    v1 = DeterministicTime(knots=((0.0, 0.0), (T, slope * T)), jumps=((jump_t, jump),))
    v2 = DeterministicTime(knots=((0.0, 0.0), (T, (slope + rng.uniform(0, 0.3)) * T)),
                           jumps=((jump_t, jump), (_grid_time(rng, N, T), rng.uniform(0, 0.2))))

    kw1, kw2 = {}, {}
    if kind != "bsde":
        l0, l1, l2 = rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(0, 0.5)
        lo_expr = "l0 + l1*B - l2*t"
        lp = dict(l0=l0, l1=l1, l2=l2)
        gap = rng.uniform(0.05, 0.5)
        dl = rng.uniform(0, gap)
        kw1["lower"] = FunctionOfState(expr=lo_expr, params=lp)
        kw2["lower"] = FunctionOfState(expr=lo_expr + " + dl", params=dict(lp, dl=dl))
        if kind == "two_barrier":
            up = dict(lp, g=gap, h=rng.uniform(0, 0.3))
            du = rng.uniform(0, 0.3)
            kw1["upper"] = FunctionOfState(expr=lo_expr + " + g + h*B**2", params=up)
            kw2["upper"] = FunctionOfState(expr=lo_expr + " + g + h*B**2 + du",
                                           params=dict(up, du=du))
    d1 = ProblemData(model, xi1, gen1, v1, **kw1)
    d2 = ProblemData(model, xi2, gen2, v2, **kw2)
    return d1, d2


def random_snell_instance(rng: np.random.Generator, N: int, T: float = 1.0) -> ProblemData:
    """Exogenous generator, one lower barrier: the setting of the brute-force oracle."""
    model = build_lattice(T, N)
    c = ((0.0, rng.uniform(-0.5, 0.5)), (T, rng.uniform(-0.5, 0.5)))
    gen = GeneratorSpec.linear(0.0, 0.0, c)
    params = dict(l0=rng.uniform(-0.5, 0.5), l1=rng.uniform(-1, 1), l2=rng.uniform(-1, 1))
    lower = FunctionOfState(expr="l0 + l1*B + l2*t*cos(B)", params=params)
    xi = FunctionOfState(expr="l0 + l1*B + l2*t*cos(B) + k*B**2",
                         params=dict(params, k=rng.uniform(0, 0.5)))
    driver = DeterministicTime(knots=((0.0, 0.0), (T, rng.uniform(-0.3, 0.3))))
    return ProblemData(model, xi, gen, driver, lower=lower)


def bisection_root(rhs: float, dt: float, a: float, d: float, lo=-1e3, hi=1e3) -> float:
    """Plain bisection on ``y (1 - a dt) + d dt y**3 = rhs``, run to a fixed point."""
    def g(y):
        return y * (1.0 - a * dt) + d * dt * y**3 - rhs

    while True:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            return lo if abs(g(lo)) <= abs(g(hi)) else hi
        if g(mid) > 0:
            hi = mid
        else:
            lo = mid


# -- battery -------------------------------------------------------------------


def verdict(name: str, passed: bool, worst: float | None = None, detail: str = "") -> dict:
    return {"name": name, "passed": bool(passed),
            "worst": None if worst is None else float(worst), "detail": detail}


def martingale_exactness(T: float, N: int) -> dict:
    model = build_lattice(T, N)
    data = ProblemData(model, FunctionOfState(expr="B"), GeneratorSpec.linear())
    sol = solve_bsde(data)
    worst = max(np.max(np.abs(model.valid(sol.Y - model.brownian))),
                float(np.nanmax(np.abs(sol.Z[:-1] - 1.0))))
    return verdict("martingale_exactness", worst <= 1e-12, worst, f"xi = B_T, N = {N}")


def implicit_step_oracle(rng, dt: float = 0.02) -> dict:
    gen = GeneratorSpec.monotone_poly()
    worst = 0.0
    for e in np.concatenate([np.arange(-2.0, 2.01, 0.5), rng.uniform(-3, 3, 12)]):
        y = implicit_step(float(e), 0.0, gen, 0.0, dt, 0.0)
        worst = max(worst, abs(y - bisection_root(float(e), dt, 0.0, 1.0)))
    return verdict("implicit_step_vs_bisection", worst <= 1e-13, worst, "f = -y^3")


def comparison_battery(rng, kind: str, count: int, N: int = 20) -> dict:
    worst, failures, inapplicable = -np.inf, 0, 0
    for _ in range(count):
        d1, d2 = random_ordered_pair(rng, kind, N)
        if kind == "bsde":
            s1, s2 = solve_bsde(d1), solve_bsde(d2)
        else:
            s1, s2 = solve_rbsde(d1), solve_rbsde(d2)
        rep = check_comparison(s1, s2, d1, d2)
        inapplicable += not rep.applicable
        failures += rep.applicable and not rep.holds
        worst = max(worst, rep.worst_gap)
    ok = failures == 0 and inapplicable == 0
    return verdict(f"comparison_{kind}", ok, worst,
                   f"{count} ordered pairs, {failures} failures, {inapplicable} not applicable")


def snell_battery(rng, count: int, depths=(3, 4)) -> dict:
    worst = 0.0
    for k in range(count):
        data = random_snell_instance(rng, depths[k % len(depths)])
        worst = max(worst, abs(snell_bruteforce(data) - solve_rbsde(data).Y0))
    return verdict("snell_equivalence", worst <= 1e-12, worst, f"{count} instances")


def convexity_battery(rng, paths: int, steps: int = 20) -> dict:
    worst = np.inf
    for p in (1.0, 1.25, 1.5, 2.0):
        x = np.cumsum(rng.normal(size=(paths, steps + 1)), axis=1)
        x[:, :: 5] = 0.0  # visits to zero exercise the sign convention
        for path in x:
            worst = min(worst, float(convexity_residual(path, p).min()))
    return verdict("convexity_residual", worst >= -1e-12, worst, "p in {1, 1.25, 1.5, 2}")


def problem_battery(data: ProblemData, schedule: PenaltySchedule | None) -> list[dict]:
    out = []
    model = data.lattice
    has_lower, has_upper = data.lower is not None, data.upper is not None
    if not (has_lower or has_upper):
        s1, s2 = solve_bsde(data, backend="python"), solve_bsde(data, backend="python")
        out.append(verdict("uniqueness_bitwise", np.array_equal(s1.Y, s2.Y, equal_nan=True)))
        if "compiled" in kernels.BACKENDS:
            s3 = solve_bsde(data, backend="compiled")
            gap = float(np.max(np.abs(model.valid(s1.Y - s3.Y))))
            out.append(verdict("backend_agreement", gap <= 1e-12, gap))
        cd = class_d_norm(s1.Y, model)
        fixed = max(float(np.nansum(model.probabilities[i] * np.abs(s1.Y[i])))
                    for i in range(model.N + 1))
        out.append(verdict("class_d_dominates_fixed_rules", cd >= fixed - 1e-12, fixed - cd))
        return out

    oracle = solve_rbsde(data)
    sk = skorokhod_check(oracle, data)
    out.append(verdict("skorokhod_oracle", sk.passed(),
                       max(sk.lower_defect, sk.upper_defect), "defects and singularity"))
    jr = jump_formula_check(oracle, data)
    out.append(verdict("jump_formulas", jr.passed(),
                       max(jr.plus_residual, jr.minus_residual, jr.snell_residual)))
    cd = class_d_norm(oracle.Y, model)
    fixed = max(float(np.nansum(model.probabilities[i] * np.abs(oracle.Y[i])))
                for i in range(model.N + 1))
    out.append(verdict("class_d_dominates_fixed_rules", cd >= fixed - 1e-12, fixed - cd))

    schedule = schedule or DEFAULT_SCHEDULE
    run = run_schedule(data, schedule, oracle)
    out.append(verdict("penalty_monotonicity", run.monotonicity.holds,
                       run.monotonicity.worst_violation,
                       f"{run.monotonicity.pairs_checked} comparable pairs, tol {MONOTONE_TOL}"))
    defects = [max(d.lower_defect, d.upper_defect) for d in run.defects]
    out.append(verdict("penalty_defect_decay",
                       all(b <= a for a, b in zip(defects, defects[1:])), defects[-1]))
    errors = [e.sup_error for e in run.errors_vs_oracle]
    out.append(verdict("penalty_error_decay",
                       all(b <= a for a, b in zip(errors, errors[1:])), errors[-1]))
    if has_lower and has_upper:
        n = schedule.levels[-1][0]
        sw = sandwich_check(data, n)
        out.append(verdict("sandwich", sw.holds, max(sw.lower_gap, sw.upper_gap), f"n = {n}"))
        mk = mokobodzki_check(data)
        out.append(verdict("mokobodzki_feasible", mk.feasible))
    if data.p > 1 and len(run.solutions) > 1:
        gen = data.generator
        a = max(0.0, gen.mu + gen.lam**2 / min(1.0, data.p - 1.0))
        audit = apriori_audit(run.solutions, data, data.p, a, dominating=oracle.Y)
        out.append(verdict("apriori_uniformity", audit.passed, audit.max_ratio / audit.fitted_ratio,
                           f"K-total growth {audit.max_K / audit.fitted_K if audit.fitted_K else 1.0!r}"))
    return out


def run_battery(data: ProblemData, schedule: PenaltySchedule | None, seed: int,
                pairs: int = 20) -> list[dict]:
    """Every invariant the suite attempts, in a fixed order; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    verdicts = [martingale_exactness(data.lattice.grid.horizon, data.lattice.N),
                implicit_step_oracle(rng)]
    verdicts += [comparison_battery(rng, kind, pairs) for kind in PAIR_KINDS]
    verdicts.append(snell_battery(rng, 4))
    verdicts.append(convexity_battery(rng, 100))
    verdicts += problem_battery(data, schedule)
    return verdicts
