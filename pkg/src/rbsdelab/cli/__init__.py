"""Command-line interface: ``solve``, ``suite`` and ``bench`` subcommands."""

from __future__ import annotations

import argparse
import logging
import sys

from .. import kernels
from ..errors import ConfigError, RBSDEError
from .config import ExperimentSpec, bundled_config, bundled_configs, load_config, parse_config
from .report import Report, emit_report
from .runner import run_experiment

__all__ = ["ExperimentSpec", "Report", "emit_report", "main", "parse_config", "run_experiment"]

log = logging.getLogger("rbsdelab")

EXIT_OK, EXIT_FAILED_VERDICT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-json", metavar="PATH", help="write the JSON report here")
    common.add_argument("--out-csv", metavar="PATH", help="write the per-level CSV table here")
    common.add_argument("--strict-terminal", action="store_true", default=None,
                        help="reject terminal values outside [L_T, U_T]")
    common.add_argument("--backend", choices=sorted(kernels.BACKENDS),
                        help="sweep kernel implementation (default: compiled when available)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rbsdelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="run the experiment in a config file")
    p.add_argument("config")
    p = sub.add_parser("suite", parents=[common], help="run the invariant battery")
    p.add_argument("config")
    p.add_argument("--seed", type=int, required=True)
    p = sub.add_parser("bench", parents=[common], help="run a bundled benchmark config")
    p.add_argument("name", help=f"one of: {', '.join(bundled_configs())}")
    return parser


def _summary_lines(report: Report) -> list[str]:
    lines = [f"mode: {report.mode}"]
    for key in ("Y0", "oracle_Y0", "K_total", "A_total"):
        if report.summary.get(key) is not None:
            lines.append(f"{key}: {report.summary[key]!r}")
    for row in report.levels:
        lines.append("level {level_index}: n={n!r} m={m!r} Y0={Y0!r} sup_error={sup_error_vs_oracle!r}"
                     .format(**row))
    for v in report.verdicts:
        lines.append(f"{'PASS' if v['passed'] else 'FAIL'} {v['name']} (worst={v['worst']!r})")
    return lines


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.backend:
        kernels.set_backend(args.backend)
    try:
        if args.command == "bench":
            spec = load_config(bundled_config(args.name))
        else:
            spec = load_config(args.config)
        if args.command == "suite" and spec.mode != "suite":
            from dataclasses import replace
            spec = replace(spec, mode="suite")
        log.info("running %s (backend %s)", spec.mode, kernels.active_backend())
        report = run_experiment(spec, seed=getattr(args, "seed", None),
                                strict_terminal=args.strict_terminal)
        targets = list(spec.outputs)
        if args.out_json:
            targets.append(("json", args.out_json))
        if args.out_csv:
            targets.append(("csv", args.out_csv))
        for path in emit_report(report, targets):
            log.info("wrote %s", path)
    except ConfigError as exc:
        print(f"rbsdelab: configuration error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RBSDEError as exc:
        print(f"rbsdelab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print("\n".join(_summary_lines(report)))
    return EXIT_OK if report.passed else EXIT_FAILED_VERDICT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
