"""Experiment configuration: JSON schema, parsing and canonical serialization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from ..errors import ConfigError, InfeasibleBarriers, InvalidConfiguration, StabilityError
from ..lattice import build_lattice
from ..penalty import PenaltySchedule
from ..processes import (
    Constant,
    DeterministicTime,
    FunctionOfState,
    GeneratorSpec,
    ProblemData,
    ProcessSpec,
    ZCondition,
)

MODES = ("bsde", "rbsde_one", "rbsde_two", "penalization", "suite")
CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

_number = {"type": "number"}
_coefficient = {
    "oneOf": [
        _number,
        {"type": "array", "minItems": 1,
         "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}},
    ]
}
_jumps = {"type": "array",
          "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}}
_z_condition = {
    "type": "object",
    "required": ["alpha", "gamma"],
    "properties": {"alpha": _number, "gamma": _number, "g": _coefficient},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rbsdelab experiment",
    "type": "object",
    "required": ["mode", "problem"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": 1},
        "name": {"type": "string"},
        "mode": {"enum": list(MODES)},
        "problem": {"$ref": "#/$defs/problem"},
        "schedule": {"$ref": "#/$defs/schedule"},
        "oracle": {"type": "boolean"},
        "outputs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["format", "path"],
                "properties": {"format": {"enum": ["csv", "json"]}, "path": {"type": "string"}},
                "additionalProperties": False,
            },
        },
        "seed": {"type": "integer"},
        "strict_terminal": {"type": "boolean"},
    },
    "$defs": {
        "problem": {
            "type": "object",
            "required": ["grid", "generator", "terminal"],
            "additionalProperties": False,
            "properties": {
                "grid": {
                    "type": "object",
                    "required": ["T", "N"],
                    "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                                   "N": {"type": "integer", "minimum": 1}},
                    "additionalProperties": False,
                },
                "generator": {"$ref": "#/$defs/generator"},
                "terminal": {"$ref": "#/$defs/process"},
                "driver": {"$ref": "#/$defs/process"},
                "lower": {"$ref": "#/$defs/process"},
                "upper": {"$ref": "#/$defs/process"},
                "p": {"type": "number", "minimum": 1},
            },
        },
        "generator": {
            "type": "object",
            "required": ["form"],
            "properties": {"form": {"enum": ["linear", "monotone_poly", "tabulated"]}},
            "allOf": [
                {"if": {"properties": {"form": {"const": "linear"}}},
                 "then": {"properties": {"form": True, "a": _coefficient, "b": _coefficient,
                                         "c": _coefficient, "mu": _number, "lambda": _number,
                                         "z_condition": _z_condition},
                          "additionalProperties": False}},
                {"if": {"properties": {"form": {"const": "monotone_poly"}}},
                 "then": {"properties": {"form": True, "mu_tilde": _number, "c": _coefficient,
                                         "mu": _number, "lambda": {"const": 0},
                                         "z_condition": _z_condition},
                          "additionalProperties": False}},
                {"if": {"properties": {"form": {"const": "tabulated"}}},
                 "then": {"properties": {"form": True, "a": _coefficient, "b": _coefficient,
                                         "c": _coefficient, "d": _coefficient, "mu": _number,
                                         "lambda": _number, "z_condition": _z_condition},
                          "additionalProperties": False}},
            ],
        },
        "process": {
            "oneOf": [
                _number,
                {"type": "object", "required": ["kind", "value"], "additionalProperties": False,
                 "properties": {"kind": {"const": "constant"}, "value": _number, "jumps": _jumps}},
                {"type": "object", "required": ["kind"], "additionalProperties": False,
                 "properties": {"kind": {"const": "deterministic_time"},
                                "values": {"type": "array", "items": _number},
                                "knots": _coefficient["oneOf"][1], "jumps": _jumps},
                 "oneOf": [{"required": ["values"]}, {"required": ["knots"]}]},
                {"type": "object", "required": ["kind", "expr"], "additionalProperties": False,
                 "properties": {"kind": {"const": "function_of_state"},
                                "expr": {"type": "string"},
                                "params": {"type": "object", "additionalProperties": _number},
                                "jumps": _jumps}},
            ]
        },
        "schedule": {
            "oneOf": [
                {"type": "object", "required": ["levels"], "additionalProperties": False,
                 "properties": {"levels": {"type": "array", "minItems": 1, "items": {"oneOf": [
                     _number,
                     {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": ["number", "null"]}}]}}}},
                {"type": "object", "required": ["geometric"], "additionalProperties": False,
                 "properties": {"geometric": {
                     "type": "object", "required": ["n0", "count"], "additionalProperties": False,
                     "properties": {"n0": _number, "count": {"type": "integer", "minimum": 1},
                                    "ratio": _number, "diagonal": {"type": "boolean"}}}}},
            ]
        },
    },
}


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """A validated experiment; ``problem`` is ready to solve."""

    problem: ProblemData
    mode: str
    schedule: PenaltySchedule | None = None
    oracle: bool = True
    outputs: tuple = ()
    seed: int = 0
    strict_terminal: bool = False
    name: str | None = None

    def problem_dict(self) -> dict:
        data = self.problem
        out = {"grid": {"T": data.lattice.grid.horizon, "N": data.lattice.N},
               "generator": data.generator.to_dict(),
               "terminal": data.terminal.to_dict()}
        for role in ("driver", "lower", "upper"):
            spec = getattr(data, role)
            if spec is not None:
                out[role] = spec.to_dict()
        out["p"] = float(data.p)
        return out

    def to_dict(self, include_outputs: bool = True) -> dict:
        """Canonical document; parsing it yields an equivalent spec."""
        out = {"schema_version": 1}
        if self.name is not None:
            out["name"] = self.name
        out["mode"] = self.mode
        out["problem"] = self.problem_dict()
        if self.schedule is not None:
            out["schedule"] = {"levels": [[n, m] for n, m in self.schedule.levels]}
        out["oracle"] = self.oracle
        out["seed"] = self.seed
        out["strict_terminal"] = self.strict_terminal
        if include_outputs:
            out["outputs"] = [{"format": f, "path": p} for f, p in self.outputs]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def _pointer(parts) -> str:
    return "/" + "/".join(str(p) for p in parts)


def _validate_schema(doc) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), e.message))
    if errors:
        err = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(err.message, _pointer(err.absolute_path))


def build_process(doc, path: str, role: str) -> ProcessSpec:
    try:
        if isinstance(doc, (int, float)):
            return Constant(value=float(doc), role=role)
        jumps = tuple(tuple(j) for j in doc.get("jumps", ()))
        kind = doc["kind"]
        if kind == "constant":
            return Constant(value=doc["value"], jumps=jumps, role=role)
        if kind == "deterministic_time":
            return DeterministicTime(values=doc.get("values"),
                                     knots=doc.get("knots"), jumps=jumps, role=role)
        return FunctionOfState(expr=doc["expr"], params=doc.get("params", {}),
                               jumps=jumps, role=role)
    except InvalidConfiguration as exc:
        raise ConfigError(str(exc), path) from None


def build_generator(doc, path: str = "/problem/generator") -> GeneratorSpec:
    zc = doc.get("z_condition")
    try:
        z_condition = None if zc is None else ZCondition(zc["alpha"], zc["gamma"], zc.get("g", 0.0))
        form = doc["form"]
        if form == "linear":
            return GeneratorSpec.linear(doc.get("a", 0.0), doc.get("b", 0.0), doc.get("c", 0.0),
                                        mu=doc.get("mu"), lam=doc.get("lambda"),
                                        z_condition=z_condition)
        if form == "monotone_poly":
            return GeneratorSpec.monotone_poly(doc.get("mu_tilde", 0.0), doc.get("c", 0.0),
                                               mu=doc.get("mu"), z_condition=z_condition)
        return GeneratorSpec.tabulated(doc.get("a", 0.0), doc.get("b", 0.0), doc.get("c", 0.0),
                                       doc.get("d", 0.0), mu=doc.get("mu"),
                                       lam=doc.get("lambda"), z_condition=z_condition)
    except InvalidConfiguration as exc:
        raise ConfigError(str(exc), path) from None


_ROLE_NAMES = {"terminal": "terminal", "driver": "driver",
               "lower": "barrier-lower", "upper": "barrier-upper"}


def build_problem(doc: dict) -> ProblemData:
    grid = doc["grid"]
    model = build_lattice(grid["T"], grid["N"])
    specs = {}
    for role in ("terminal", "driver", "lower", "upper"):
        if role in doc:
            spec = build_process(doc[role], f"/problem/{role}", _ROLE_NAMES[role])
            try:
                spec.jump_sizes(model)
            except InvalidConfiguration as exc:
                raise ConfigError(str(exc), f"/problem/{role}/jumps") from None
            specs[role] = spec
    generator = build_generator(doc["generator"])
    try:
        return ProblemData(model, generator=generator, p=float(doc.get("p", 2.0)), **specs)
    except StabilityError as exc:
        raise ConfigError(f"stability invariant dt*max(mu,0) < 1 violated: {exc}",
                          "/problem/generator") from None
    except InfeasibleBarriers as exc:
        raise ConfigError(f"barrier ordering invariant L <= U violated: {exc}",
                          "/problem") from None
    except InvalidConfiguration as exc:
        raise ConfigError(str(exc), "/problem") from None


def _build_schedule(doc) -> PenaltySchedule:
    try:
        if "geometric" in doc:
            g = doc["geometric"]
            return PenaltySchedule.geometric(g["n0"], g["count"], g.get("ratio", 2.0),
                                             g.get("diagonal", False))
        levels = [tuple(v) if isinstance(v, list) else (v, None) for v in doc["levels"]]
        if any(n is None for n, _ in levels):
            raise InvalidConfiguration("penalty level n may not be null")
        return PenaltySchedule(tuple(levels))
    except InvalidConfiguration as exc:
        raise ConfigError(str(exc), "/schedule") from None


def _check_mode(mode: str, data: ProblemData, schedule) -> None:
    barriers = (data.lower is not None) + (data.upper is not None)
    if mode == "bsde" and barriers:
        raise ConfigError("mode bsde takes no barriers", "/problem")
    if mode == "rbsde_one" and barriers != 1:
        raise ConfigError("mode rbsde_one needs exactly one barrier", "/problem")
    if mode == "rbsde_two" and barriers != 2:
        raise ConfigError("mode rbsde_two needs both barriers", "/problem")
    if mode == "penalization":
        if schedule is None:
            raise ConfigError("mode penalization needs a schedule", "/schedule")
        if not barriers:
            raise ConfigError("mode penalization needs at least one barrier", "/problem")


def _check_outputs(outputs) -> None:
    for k, (_, path) in enumerate(outputs):
        parent = Path(path).resolve().parent
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise ConfigError(f"output directory {str(parent)!r} is not writable",
                              f"/outputs/{k}/path")


def parse_config(text: str | dict) -> ExperimentSpec:
    """Validate a configuration document (JSON text or a decoded dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc.msg} (line {exc.lineno})", "/") from None
    else:
        doc = text
    _validate_schema(doc)
    data = build_problem(doc["problem"])
    schedule = _build_schedule(doc["schedule"]) if "schedule" in doc else None
    _check_mode(doc["mode"], data, schedule)
    outputs = tuple((o["format"], o["path"]) for o in doc.get("outputs", ()))
    _check_outputs(outputs)
    return ExperimentSpec(problem=data, mode=doc["mode"], schedule=schedule,
                          oracle=doc.get("oracle", True), outputs=outputs,
                          seed=doc.get("seed", 0), strict_terminal=doc.get("strict_terminal", False),
                          name=doc.get("name"))


def load_config(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "/") from None
    return parse_config(text)


def bundled_configs() -> list[str]:
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json"))


def bundled_config(name: str) -> Path:
    path = CONFIG_DIR / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown benchmark {name!r}; available: {', '.join(bundled_configs())}",
                          "/")
    return path
