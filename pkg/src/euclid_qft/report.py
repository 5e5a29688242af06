"""Run reports and their JSON/CSV serialization.

The body of a report (everything but wall time and timestamp) is a pure
function of config and seed, so two identical runs produce byte-identical
bodies.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from euclid_qft import __version__
from euclid_qft.errors import ReportFormatError

SCHEMA_VERSION = 1
FORMATS = ("json", "csv")


@dataclass(frozen=True)
class Check:
    """One verdict: an inequality or tolerance the result must satisfy."""

    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "value": self.value,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class RunReport:
    command: str
    config: dict
    results: dict | list
    seed: int
    checks: list[Check] = field(default_factory=list)
    tool_version: str = __version__
    wall_time_s: float = 0.0
    created_at: str = ""

    @property
    def tabular(self) -> bool:
        return isinstance(self.results, list) and all(isinstance(r, dict) for r in self.results)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def verdict(self) -> str:
        if not self.checks:
            return "n/a"
        return "pass" if self.passed else "fail"

    def check(self, name: str, passed: bool, value=None, tolerance=None, detail: str = "") -> bool:
        self.checks.append(Check(name, bool(passed), _plain(value), _plain(tolerance), detail))
        return bool(passed)

    def stamp(self, wall_time_s: float) -> "RunReport":
        self.wall_time_s = float(wall_time_s)
        self.created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return self


def _plain(value):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    return value


def report_body(report: RunReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": report.command,
        "tool_version": report.tool_version,
        "seed": report.seed,
        "config": _plain(report.config),
        "results": _plain(report.results),
        "checks": [c.to_dict() for c in report.checks],
        "verdict": report.verdict,
    }


def canonical_body(report: RunReport) -> str:
    """Compact, key-sorted body used for archiving and baseline comparison."""
    return json.dumps(report_body(report), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _render_json(report: RunReport) -> str:
    payload = report_body(report)
    payload["meta"] = {"wall_time_s": report.wall_time_s, "created_at": report.created_at}
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _render_csv(report: RunReport) -> str:
    if not report.tabular or not report.results:
        raise ReportFormatError(
            f"'{report.command}' produces a scalar report; csv is only available for tabular scans "
            "such as propagator and energy-density (use --format json)"
        )
    rows = _plain(report.results)
    columns: list[str] = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    buffer = io.StringIO()
    buffer.write(f"# schema_version={SCHEMA_VERSION}\n")
    buffer.write(f"# command={report.command}\n")
    buffer.write(f"# tool_version={report.tool_version}\n")
    buffer.write(f"# seed={report.seed}\n")
    buffer.write(f"# verdict={report.verdict}\n")
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in row.items()})
    return buffer.getvalue()


def emit_report(report: RunReport, fmt: str = "json", path: Path | str | None = None) -> str:
    """Render ``report`` and write it to ``path`` when given; returns the text."""
    if fmt not in FORMATS:
        raise ReportFormatError(f"format must be one of {FORMATS}, got {fmt!r}")
    text = _render_json(report) if fmt == "json" else _render_csv(report)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


def default_format(report: RunReport) -> str:
    return "csv" if report.tabular and report.results else "json"
