import csv
import io
import json
import os
from dataclasses import replace

import pytest

from rbsdelab.cli import main
from rbsdelab.cli.config import (
    SCHEMA,
    bundled_config,
    bundled_configs,
    load_config,
    parse_config,
)
from rbsdelab.cli.report import (
    LEVEL_COLUMNS,
    SCHEMA_VERSION,
    Report,
    csv_text,
    dumps,
    emit_report,
    format_float,
)
from rbsdelab.cli.runner import config_hash, run_experiment
from rbsdelab.errors import ConfigError, ReportWriteError
from rbsdelab.reflect import solve_rbsde

from conftest import PUT, PUT_PARAMS
from oracles import classic_american_put

PUT_PROCESS = {"kind": "function_of_state", "expr": PUT, "params": PUT_PARAMS}


def minimal(mode="bsde", **problem):
    doc = {"mode": mode, "problem": {"grid": {"T": 1.0, "N": 2},
                                     "generator": {"form": "linear"}, "terminal": 0.0}}
    doc["problem"].update(problem)
    return doc


def two_barrier_doc():
    return {
        "schema_version": 1, "name": "corridor", "mode": "penalization",
        "problem": {
            "grid": {"T": 1.0, "N": 20},
            "generator": {"form": "tabulated", "a": [[0.0, -0.1], [1.0, 0.1]], "d": 0.5, "c": 0.05},
            "terminal": {"kind": "function_of_state", "expr": "0.2*sin(B)"},
            "driver": {"kind": "deterministic_time", "knots": [[0.0, 0.0], [1.0, 0.1]],
                       "jumps": [[0.5, -0.05]]},
            "lower": {"kind": "constant", "value": -0.3},
            "upper": {"kind": "function_of_state", "expr": "0.3 + 0.1*B**2"},
            "p": 2.0,
        },
        "schedule": {"geometric": {"n0": 10, "count": 8, "diagonal": True}},
        "seed": 3,
    }


# -- parsing -------------------------------------------------------------------


def test_minimal_config():
    spec = parse_config(minimal())
    assert spec.mode == "bsde"
    assert spec.problem.lattice.N == 2


def test_parse_accepts_text():
    assert parse_config(json.dumps(minimal())).mode == "bsde"


def test_jump_off_grid():
    doc = minimal(driver={"kind": "constant", "value": 0.0, "jumps": [[0.33, 0.1]]})
    with pytest.raises(ConfigError, match="jump time 0.33 off grid") as info:
        parse_config(doc)
    assert info.value.path == "/problem/driver/jumps"


def test_round_trip_two_barrier():
    spec = parse_config(two_barrier_doc())
    assert len(spec.schedule) == 8
    once = spec.to_dict()
    again = parse_config(once).to_dict()
    assert once == again
    assert spec.to_json() == parse_config(spec.to_json()).to_json()


@pytest.mark.parametrize("mutate, pointer", [
    (lambda d: d.update(mode="nope"), "/mode"),
    (lambda d: d["problem"]["grid"].update(N=0), "/problem/grid/N"),
    (lambda d: d["problem"]["generator"].update(d=1.0), "/problem/generator"),
    (lambda d: d.update(extra=1), "/"),
    (lambda d: d["problem"].update(lower=1.0), "/problem"),
    (lambda d: d["problem"]["generator"].update(a=3.0), "/problem/generator"),
])
def test_config_error_paths(mutate, pointer):
    doc = minimal()
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == pointer


def test_stability_and_ordering_messages():
    doc = minimal(mode="rbsde_two", lower=1.0, upper=0.0)
    with pytest.raises(ConfigError, match="barrier ordering invariant"):
        parse_config(doc)
    with pytest.raises(ConfigError, match="stability invariant"):
        parse_config(minimal(generator={"form": "linear", "a": 3.0}))


def test_mode_checks():
    with pytest.raises(ConfigError, match="exactly one barrier"):
        parse_config(minimal(mode="rbsde_one"))
    with pytest.raises(ConfigError, match="needs a schedule"):
        parse_config(minimal(mode="penalization", lower=0.0))


def test_malformed_json_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="malformed JSON"):
        parse_config("{")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_unwritable_output_dir(tmp_path):
    doc = minimal()
    doc["outputs"] = [{"format": "json", "path": str(tmp_path / "nope" / "r.json")}]
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == "/outputs/0/path"


def test_bundled_configs_load():
    assert set(bundled_configs()) >= {"american_put", "dynkin_toy", "cubic_barrier"}
    for name in bundled_configs():
        load_config(bundled_config(name))
    with pytest.raises(ConfigError):
        bundled_config("nonexistent")


def test_schema_is_draft_2020_12():
    import jsonschema

    jsonschema.Draft202012Validator.check_schema(SCHEMA)


# -- running -------------------------------------------------------------------


def test_bsde_square_toy():
    spec = parse_config(minimal(terminal={"kind": "function_of_state", "expr": "B**2"}))
    report = run_experiment(spec)
    # B_T^2 - T is a martingale
    assert report.summary["Y0"] == pytest.approx(1.0, abs=1e-15)
    assert report.passed and report.levels == []


def test_reflected_mode():
    spec = parse_config(minimal(mode="rbsde_one", grid={"T": 1.0, "N": 30},
                                generator={"form": "linear", "a": -0.05},
                                terminal=PUT_PROCESS, lower=PUT_PROCESS))
    report = run_experiment(spec)
    ref = classic_american_put(1.0, 1.0, 0.05, 0.2, 1.0, 30)
    assert abs(report.summary["Y0"] - ref) <= 1e-12
    assert report.passed


def test_penalization_american_put():
    spec = load_config(bundled_config("american_put"))
    report = run_experiment(spec)
    errors = [row["sup_error_vs_oracle"] for row in report.levels]
    assert len(errors) == 11
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert report.summary["oracle_Y0"] == solve_rbsde(spec.problem).Y0
    names = {v["name"]: v["passed"] for v in report.verdicts}
    assert names["penalty_monotonicity"] and names["penalty_error_decay"]
    assert names["penalty_defect_decay"]
    assert "apriori_uniformity" in names


def test_suite_seed_7_passes():
    spec = parse_config(minimal(grid={"T": 1.0, "N": 8}))
    report = run_experiment(replace(spec, mode="suite"), seed=7)
    failed = [v["name"] for v in report.verdicts if not v["passed"]]
    assert failed == []
    assert report.summary["total"] == len(report.verdicts) > 0


def test_determinism():
    spec = load_config(bundled_config("dynkin_toy"))
    a, b = run_experiment(spec), run_experiment(spec)
    assert dumps(a.to_dict()) == dumps(b.to_dict())
    assert config_hash(spec) == config_hash(load_config(bundled_config("dynkin_toy")))
    assert a.provenance["config_hash"] == config_hash(spec)


# -- reports -------------------------------------------------------------------


def test_format_float():
    assert format_float(1.0) == "1.0"
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(float("inf")) is None
    assert float(format_float(1 / 3)) == 1 / 3


def test_csv_header_only():
    assert csv_text([]) == ",".join(LEVEL_COLUMNS) + "\n"


def test_csv_one_row():
    row = dict(level_index=0, n=10.0, m=None, Y0=0.5, sup_error_vs_oracle=None, K_total=0.1,
               A_total=0.0, lower_defect=float("nan"), upper_defect=0.0)
    rows = list(csv.reader(io.StringIO(csv_text([row]))))
    assert len(rows) == 2
    assert rows[1] == ["0", "10.0", "", "0.5", "", "0.10000000000000001", "0.0", "", "0.0"]


def test_json_fixpoint():
    report = run_experiment(parse_config(two_barrier_doc()))
    text = dumps(report.to_dict())
    again = dumps(Report.from_dict(json.loads(text)).to_dict())
    assert text == again
    assert json.loads(text)["schema_version"] == SCHEMA_VERSION


def test_emit_report_atomic(tmp_path):
    report = Report(mode="bsde", summary={"Y0": 1.0})
    paths = emit_report(report, [("json", tmp_path / "r.json"), ("csv", tmp_path / "r.csv")])
    assert [p.name for p in paths] == ["r.json", "r.csv"]
    assert sorted(os.listdir(tmp_path)) == ["r.csv", "r.json"]
    with pytest.raises(ReportWriteError):
        emit_report(report, [("json", tmp_path / "missing" / "r.json")])
    with pytest.raises(ValueError):
        emit_report(report, [("xml", tmp_path / "r.xml")])


# -- main ----------------------------------------------------------------------


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_main_solve_writes_reports(tmp_path, capsys):
    cfg = write_config(tmp_path, two_barrier_doc())
    out_json, out_csv = tmp_path / "r.json", tmp_path / "r.csv"
    code = main(["solve", cfg, "--out-json", str(out_json), "--out-csv", str(out_csv)])
    text = capsys.readouterr().out
    assert code in (0, 1)
    assert "mode: penalization" in text
    assert len(out_csv.read_text().splitlines()) == 9
    assert json.loads(out_json.read_text())["mode"] == "penalization"


def test_main_config_error_exit(tmp_path, capsys):
    doc = minimal(driver={"kind": "constant", "value": 0.0, "jumps": [[0.33, 0.1]]})
    assert main(["solve", write_config(tmp_path, doc)]) == 2
    assert "configuration error at /problem/driver/jumps" in capsys.readouterr().err


def test_main_runtime_error_exit(tmp_path, capsys):
    doc = minimal(mode="rbsde_one", lower=1.0)
    assert main(["solve", write_config(tmp_path, doc), "--strict-terminal"]) == 3
    assert "below lower barrier" in capsys.readouterr().err


def test_main_bench_and_backend(capsys):
    assert main(["bench", "american_put", "--backend", "python"]) in (0, 1)
    assert "penalty_error_decay" in capsys.readouterr().out


def test_main_suite(tmp_path, capsys):
    cfg = write_config(tmp_path, minimal(grid={"T": 1.0, "N": 8}))
    assert main(["suite", cfg, "--seed", "7"]) == 0
    assert "FAIL" not in capsys.readouterr().out
