"""Run reports and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["RunRecord", "RunReport", "emit_report", "read_report", "report_from_json",
           "REPORT_COLUMNS"]

REPORT_COLUMNS = (
    "task", "level", "method", "central_epsilon", "local_epsilon", "epsilon_x", "epsilon_y",
    "epsilon_per_feature", "accuracy_kind", "mean", "std", "n_trials", "trial_values",
    "seeds", "bound", "status",
)
_FLOAT_COLUMNS = ("central_epsilon", "local_epsilon", "epsilon_x", "epsilon_y",
                  "epsilon_per_feature", "mean", "std", "bound")


@dataclass
class RunRecord:
    """Accuracy of one (method, local eps, central eps, accuracy kind) cell over trials."""

    task: str
    level: str
    method: str
    central_epsilon: float
    local_epsilon: float
    accuracy_kind: str
    trial_values: list
    seeds: list
    epsilon_x: float = math.nan
    epsilon_y: float = math.nan
    epsilon_per_feature: float = math.nan
    bound: float = math.nan
    status: str = "ok"
    wall_time: float = 0.0

    @property
    def n_trials(self):
        return len(self.trial_values)

    @property
    def mean(self):
        return float(np.mean(self.trial_values)) if self.trial_values else math.nan

    @property
    def std(self):
        """Sample standard deviation (n - 1 denominator)."""
        if len(self.trial_values) < 2:
            return math.nan
        return float(np.std(self.trial_values, ddof=1))

    def row(self):
        return {
            "task": self.task, "level": self.level, "method": self.method,
            "central_epsilon": self.central_epsilon, "local_epsilon": self.local_epsilon,
            "epsilon_x": self.epsilon_x, "epsilon_y": self.epsilon_y,
            "epsilon_per_feature": self.epsilon_per_feature,
            "accuracy_kind": self.accuracy_kind, "mean": self.mean, "std": self.std,
            "n_trials": self.n_trials, "trial_values": list(self.trial_values),
            "seeds": list(self.seeds), "bound": self.bound, "status": self.status,
        }


@dataclass
class RunReport:
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def add(self, record):
        self.records.append(record)
        return record

    def find(self, **kw):
        return [r for r in self.records if all(getattr(r, k) == v for k, v in kw.items())]

    def get(self, **kw):
        found = self.find(**kw)
        if len(found) != 1:
            raise KeyError(f"{len(found)} records match {kw}")
        return found[0]


def _fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _csv_cell(key, value):
    if key in _FLOAT_COLUMNS:
        return _fmt(value)
    if key == "trial_values":
        return ";".join(_fmt(v) for v in value)
    if key == "seeds":
        return ";".join(str(int(s)) for s in value)
    return str(value)


def _json_value(key, value):
    if key in _FLOAT_COLUMNS:
        v = float(value)
        return v if math.isfinite(v) else _fmt(v)
    if key == "trial_values":
        return [float(v) if math.isfinite(v) else _fmt(v) for v in value]
    if key == "seeds":
        return [int(s) for s in value]
    return value


def emit_report(report: RunReport, fmt="csv", path=None):
    """Serialize ``report`` one row per record with a fixed column order.

    Floats carry 17 significant digits, so :func:`read_report` reproduces
    them exactly. Returns the text; writes it to ``path`` when given.
    """
    rows = [r.row() for r in report.records]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_csv_cell(k, row[k]) for k in REPORT_COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        doc = {
            "columns": list(REPORT_COLUMNS),
            "rows": [{k: _json_value(k, row[k]) for k in REPORT_COLUMNS} for row in rows],
            "metadata": report.metadata,
            "failures": report.failures,
        }
        text = json.dumps(doc, indent=1, sort_keys=False) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _parse_float(s):
    return float(s)


def read_report(path_or_text, fmt=None):
    """Parse an emitted report back into a list of row dicts with numeric fields restored."""
    text = path_or_text
    if isinstance(path_or_text, Path) or (
            isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
        if fmt is None:
            fmt = "json" if str(path_or_text).endswith(".json") else "csv"
    fmt = fmt or ("json" if text.lstrip().startswith("{") else "csv")
    if fmt == "json":
        doc = json.loads(text)
        rows = doc["rows"]
        for row in rows:
            for k in _FLOAT_COLUMNS:
                row[k] = float(row[k])
            row["trial_values"] = [float(v) for v in row["trial_values"]]
        return rows
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        row = dict(raw)
        for k in _FLOAT_COLUMNS:
            row[k] = _parse_float(row[k])
        row["n_trials"] = int(row["n_trials"])
        row["trial_values"] = [float(v) for v in row["trial_values"].split(";") if v]
        row["seeds"] = [int(s) for s in row["seeds"].split(";") if s]
        rows.append(row)
    return rows


def report_from_json(path_or_text):
    """Rebuild a :class:`RunReport` (records, metadata, failures) from its JSON form."""
    text = path_or_text
    if isinstance(path_or_text, Path) or "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text()
    doc = json.loads(text)
    report = RunReport(metadata=doc.get("metadata", {}), failures=doc.get("failures", []))
    for row in doc["rows"]:
        report.add(RunRecord(
            task=row["task"], level=row["level"], method=row["method"],
            central_epsilon=float(row["central_epsilon"]), local_epsilon=float(row["local_epsilon"]),
            accuracy_kind=row["accuracy_kind"],
            trial_values=[float(v) for v in row["trial_values"]],
            seeds=[int(s) for s in row["seeds"]],
            epsilon_x=float(row["epsilon_x"]), epsilon_y=float(row["epsilon_y"]),
            epsilon_per_feature=float(row["epsilon_per_feature"]), bound=float(row["bound"]),
            status=row["status"]))
    return report
