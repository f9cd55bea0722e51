"""Run artifacts: report.json, series.csv, optional extra files.

The json layout keeps everything that must reproduce bit-exactly from a
config (config echo, results, criteria, series) apart from the "meta"
section, which holds wall clock and sizes and is allowed to vary between
otherwise identical runs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

__all__ = ["Criterion", "ExperimentReport"]


@dataclass(frozen=True)
class Criterion:
    """One pass/fail line of a run."""

    name: str
    passed: bool
    detail: str

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass
class ExperimentReport:
    """Everything a run emits.

    ``series_rows`` are the raw measurements; every number quoted in
    ``results`` is derived from them.  ``extra_files`` maps a file name
    to a jsonable object written alongside the report.
    """

    experiment: str
    config: dict
    results: dict
    criteria: list[Criterion]
    series_columns: list[str]
    series_rows: list[list]
    meta: dict = field(default_factory=dict)
    extra_files: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def __bool__(self) -> bool:
        return self.passed

    def to_json_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "results": self.results,
            "criteria": [c.to_json() for c in self.criteria],
            "series_columns": list(self.series_columns),
            "series_rows": [list(map(_jsonable, row)) for row in self.series_rows],
            "passed": self.passed,
            "meta": self.meta,
        }

    def write(self, out_dir) -> dict:
        """Write report.json, series.csv and extras; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {}
        report_path = os.path.join(out_dir, "report.json")
        with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths["report"] = report_path
        series_path = os.path.join(out_dir, "series.csv")
        with open(series_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.series_columns)
            for row in self.series_rows:
                writer.writerow([_cell(x) for x in row])
        paths["series"] = series_path
        for name, payload in self.extra_files.items():
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
            paths[name] = path
        return paths


def _jsonable(x):
    if hasattr(x, "item"):
        return x.item()
    return x


def _cell(x) -> str:
    # repr keeps floats round-trippable; everything else is plain str
    x = _jsonable(x)
    if isinstance(x, float):
        return repr(x)
    return str(x)
