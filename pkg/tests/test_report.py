import json

import numpy as np
import pytest

from euclid_qft import __version__
from euclid_qft.errors import ReportFormatError
from euclid_qft.report import SCHEMA_VERSION, RunReport, canonical_body, default_format, emit_report


def _scalar_report():
    report = RunReport("partition", {"run": {"samples": 10}}, {"Z": np.float64(1.25), "overflow": np.bool_(False)}, 3)
    report.check("jensen", True, value=np.float64(1.25), tolerance=1.0, detail="Z >= 1")
    return report


def _table_report():
    rows = [{"x_length": 0.0, "lattice": 0.5, "continuum": None}, {"x_length": 1.0, "lattice": 0.2, "continuum": 0.18}]
    return RunReport("propagator", {}, rows, 3)


def test_verdicts():
    report = _scalar_report()
    assert report.verdict == "pass"
    report.check("bound", False)
    assert report.verdict == "fail"
    assert not report.passed
    assert _table_report().verdict == "n/a"


def test_json_carries_schema_and_meta(tmp_path):
    report = _scalar_report().stamp(0.5)
    text = emit_report(report, "json", tmp_path / "out" / "report.json")
    payload = json.loads((tmp_path / "out" / "report.json").read_text())
    assert text.endswith("\n")
    assert payload["schema_version"] == SCHEMA_VERSION
    assert payload["tool_version"] == __version__
    assert payload["results"]["Z"] == 1.25
    assert payload["results"]["overflow"] is False
    assert payload["checks"][0]["name"] == "jensen"
    assert payload["meta"]["wall_time_s"] == 0.5


def test_bodies_are_byte_identical_across_runs():
    first = _scalar_report().stamp(0.1)
    second = _scalar_report().stamp(9.9)
    assert canonical_body(first) == canonical_body(second)
    assert "wall_time" not in canonical_body(first)


def test_non_finite_values_are_strings():
    report = RunReport("schwinger", {}, {"r_hat": float("nan"), "gap": np.inf}, 0)
    payload = json.loads(emit_report(report, "json"))
    assert payload["results"] == {"r_hat": "nan", "gap": "inf"}


def test_csv_for_tables():
    report = _table_report()
    assert default_format(report) == "csv"
    text = emit_report(report, "csv")
    lines = text.splitlines()
    assert lines[0] == f"# schema_version={SCHEMA_VERSION}"
    assert "# command=propagator" in lines
    assert lines[5] == "x_length,lattice,continuum"
    assert lines[6] == "0.0,0.5,"


def test_csv_refused_for_scalar_reports():
    report = _scalar_report()
    assert default_format(report) == "json"
    with pytest.raises(ReportFormatError, match="--format json"):
        emit_report(report, "csv")


def test_unknown_format():
    with pytest.raises(ReportFormatError):
        emit_report(_scalar_report(), "yaml")
