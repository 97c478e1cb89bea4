"""Dispatch an :class:`ExperimentSpec` to the solvers and assemble a :class:`Report`."""

from __future__ import annotations

import hashlib
import platform

import numpy as np

from .. import __version__, kernels
from ..bsde import solve_bsde
from ..diagnostics import apriori_audit, compute_norms, mokobodzki_check
from ..penalty import run_schedule
from ..reflect import jump_formula_check, skorokhod_check, solve_rbsde
from .config import ExperimentSpec
from .report import Report, dumps
from .suite import run_battery, verdict


def config_hash(spec: ExperimentSpec) -> str:
    return hashlib.sha256(dumps(spec.to_dict(include_outputs=False)).encode()).hexdigest()


def provenance(spec: ExperimentSpec, backend: str) -> dict:
    model = spec.problem.lattice
    return {
        "config_hash": config_hash(spec),
        "name": spec.name,
        "grid": {"T": model.grid.horizon, "N": model.N, "dt": model.dt},
        "seed": spec.seed,
        "backend": backend,
        "versions": {"rbsdelab": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def _norms(sol, data) -> dict:
    n = compute_norms(sol, data)
    return {"p": data.p, "sup_p": n.sup_p, "m_p": n.m_p, "var_p": n.var_p,
            "class_d": n.class_d, "exact": n.exact}


def _run_bsde(spec: ExperimentSpec, report: Report) -> None:
    sol = solve_bsde(spec.problem)
    report.summary = {"Y0": sol.Y0, "K_total": 0.0, "A_total": 0.0,
                      "residual": sol.residual, "norms": _norms(sol, spec.problem)}


def _run_reflected(spec: ExperimentSpec, report: Report) -> None:
    data = spec.problem
    sol = solve_rbsde(data, strict_terminal=spec.strict_terminal)
    sk = skorokhod_check(sol, data)
    jr = jump_formula_check(sol, data)
    report.summary = {
        "Y0": sol.Y0, "K_total": sol.Kplus_total, "A_total": sol.Kminus_total,
        "residual": sol.residual, "norms": _norms(sol, data),
        "skorokhod": {"lower_defect": sk.lower_defect, "upper_defect": sk.upper_defect,
                      "singularity_ok": sk.singularity_ok},
        "jumps": {"plus_residual": jr.plus_residual, "minus_residual": jr.minus_residual,
                  "snell_residual": jr.snell_residual},
    }
    report.verdicts = [verdict("skorokhod_oracle", sk.passed(),
                               max(sk.lower_defect, sk.upper_defect)),
                       verdict("jump_formulas", jr.passed(),
                               max(jr.plus_residual, jr.minus_residual, jr.snell_residual or 0.0))]
    if data.lower is not None and data.upper is not None:
        mk = mokobodzki_check(data)
        report.summary["mokobodzki"] = {"feasible": mk.feasible, "norms": mk.witness_norms,
                                        "note": mk.note}


def _run_penalization(spec: ExperimentSpec, report: Report) -> None:
    data = spec.problem
    oracle = solve_rbsde(data, strict_terminal=spec.strict_terminal) if spec.oracle else None
    run = run_schedule(data, spec.schedule, oracle)
    report.levels = run.table()
    last = run.solutions[-1]
    mono = run.monotonicity
    report.summary = {
        "Y0": last.Y0, "K_total": last.K_total, "A_total": last.A_total,
        "oracle_Y0": None if oracle is None else oracle.Y0,
        "monotonicity": {"holds": mono.holds, "worst_violation": mono.worst_violation,
                         "pairs_checked": mono.pairs_checked},
        "norms": _norms(last, data),
    }
    report.verdicts = [verdict("penalty_monotonicity", mono.holds, mono.worst_violation)]
    defects = [max(d.lower_defect, d.upper_defect) for d in run.defects]
    report.verdicts.append(verdict("penalty_defect_decay",
                                   all(b <= a for a, b in zip(defects, defects[1:])), defects[-1]))
    if oracle is not None:
        errors = [e.sup_error for e in run.errors_vs_oracle]
        report.verdicts.append(verdict("penalty_error_decay",
                                       all(b < a for a, b in zip(errors, errors[1:])), errors[-1]))
    if data.p > 1 and len(run.solutions) > 1:
        gen = data.generator
        a = max(0.0, gen.mu + gen.lam**2 / min(1.0, data.p - 1.0))
        dom = oracle.Y if oracle is not None else None
        audit = apriori_audit(run.solutions, data, data.p, a, dominating=dom)
        report.summary["apriori_audit"] = {
            "a": a, "ratios": [m.ratio for m in audit.members],
            "K_totals": [m.K_total for m in audit.members],
            "fitted_ratio": audit.fitted_ratio, "max_ratio": audit.max_ratio,
            "passed": audit.passed}
        report.verdicts.append(verdict("apriori_uniformity", audit.passed,
                                       audit.max_ratio / audit.fitted_ratio))


def _run_suite(spec: ExperimentSpec, report: Report) -> None:
    report.verdicts = run_battery(spec.problem, spec.schedule, spec.seed)
    failed = [v["name"] for v in report.verdicts if not v["passed"]]
    report.summary = {"total": len(report.verdicts), "failed": len(failed),
                      "failed_names": failed}


_DISPATCH = {"bsde": _run_bsde, "rbsde_one": _run_reflected, "rbsde_two": _run_reflected,
             "penalization": _run_penalization, "suite": _run_suite}


def run_experiment(spec: ExperimentSpec, *, seed: int | None = None,
                   strict_terminal: bool | None = None) -> Report:
    """Run ``spec``; ``seed`` and ``strict_terminal`` override the config when given."""
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if strict_terminal is not None:
        changes["strict_terminal"] = strict_terminal
    if changes:
        from dataclasses import replace
        spec = replace(spec, **changes)
    report = Report(mode=spec.mode)
    _DISPATCH[spec.mode](spec, report)
    report.provenance = provenance(spec, kernels.active_backend())
    return report
