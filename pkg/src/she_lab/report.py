"""Experiment reports: verdicts, JSON emission and CSV series."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .io import write_series_csv
from .solver import SCHEME_VERSION

SCHEME = {"package_version": __version__, "scheme_version": SCHEME_VERSION}
REPORT_SCHEMA = "she-lab-report/1"


@dataclass
class Verdict:
    criterion: str
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    asserted: bool = True

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "name": self.name,
            "passed": bool(self.passed),
            "asserted": self.asserted,
            "detail": self.detail,
        }


@dataclass
class Report:
    experiment: str
    config: dict
    per_seed: list
    aggregate: dict
    verdicts: list
    series: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts if v.asserted)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return _jsonable({
            "schema": REPORT_SCHEMA,
            **SCHEME,
            "experiment": self.experiment,
            "config": self.config,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "passed": self.passed,
            "aggregate": self.aggregate,
            "per_seed": self.per_seed,
            "series": sorted(self.series),
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    """Plain JSON types; non-finite floats become strings so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_report(report: Report, out_dir) -> Path:
    """Write ``report.json`` and ``series/<name>.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if report.series:
        (out / "series").mkdir(exist_ok=True)
        for name, columns in sorted(report.series.items()):
            write_series_csv(out / "series" / f"{name}.csv", _jsonable(columns))
    path = out / "report.json"
    path.write_text(report.to_json())
    return path
