"""Report model and CSV/JSON emission with 17 significant digits and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ReportWriteError

SCHEMA_VERSION = 1
LEVEL_COLUMNS = ("level_index", "n", "m", "Y0", "sup_error_vs_oracle", "K_total", "A_total",
                 "lower_defect", "upper_defect")


@dataclass
class Report:
    mode: str
    summary: dict = field(default_factory=dict)
    levels: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "mode": self.mode,
                "summary": self.summary, "levels": self.levels,
                "verdicts": self.verdicts, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, doc: dict) -> "Report":
        return cls(mode=doc["mode"], summary=doc["summary"], levels=doc["levels"],
                   verdicts=doc["verdicts"], provenance=doc["provenance"],
                   schema_version=doc["schema_version"])

    @property
    def passed(self) -> bool:
        return all(v["passed"] for v in self.verdicts)


def format_float(x: float) -> str | None:
    """17 significant digits; non-finite values map to None (JSON null, empty CSV cell)."""
    if not math.isfinite(x):
        return None
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        s = format_float(obj)
        return "null" if s is None else s
    if isinstance(obj, str):
        return json.dumps(obj)
    if hasattr(obj, "item"):  # numpy scalar
        return _encode(obj.item(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """Deterministic JSON text with 17-significant-digit floats."""
    return _encode(obj, indent, 0) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float):
        s = format_float(v)
        return "" if s is None else s
    return str(v)


def csv_text(levels) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LEVEL_COLUMNS)
    for row in levels:
        writer.writerow([_cell(row.get(c)) for c in LEVEL_COLUMNS])
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write ``text`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as exc:
        raise ReportWriteError(path, exc.strerror or exc) from None
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise ReportWriteError(path, exc.strerror or exc) from None


def emit_report(report: Report, targets) -> list[Path]:
    """Write ``report`` to each ``(format, path)`` target; returns the written paths."""
    written = []
    for fmt, path in targets:
        if fmt == "json":
            text = dumps(report.to_dict())
        elif fmt == "csv":
            text = csv_text(report.levels)
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        write_atomic(path, text)
        written.append(Path(path))
    return written
