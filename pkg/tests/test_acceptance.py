import pytest

from euclid_qft import acceptance
from euclid_qft.acceptance import CRITERIA, Criterion, run_acceptance
from euclid_qft.errors import ConvergenceError
from euclid_qft.report import RunReport

CHEAP = {1, 2, 6, 8}


def _report(seed=0):
    return RunReport("verify-all", {"quick": True}, {}, seed)


def test_criteria_are_numbered_in_order():
    assert [c.number for c in CRITERIA] == list(range(1, 15))
    assert CRITERIA[0].key == "01_hafnian"
    assert CRITERIA[-1].key == "14_refinement"
    assert len({c.name for c in CRITERIA}) == len(CRITERIA)


def test_cheap_criteria_pass():
    seen = []
    report = run_acceptance(_report(), quick=True, only=CHEAP, progress=seen.append)
    assert set(report.results) == {"01_hafnian", "02_magic_formula", "06_wick", "08_functoriality"}
    assert report.passed, [c for c in report.checks if not c.passed]
    assert seen == report.checks
    assert all(c.name[:2] in {"01", "02", "06", "08"} for c in report.checks)


def test_markov_criterion_scans_every_axis():
    report = run_acceptance(_report(), quick=True, only={3})
    names = {c.name for c in report.checks}
    for tag in ("1d_axis0", "2d_axis0", "2d_axis1"):
        assert {f"03.projection_{tag}", f"03.conditional_{tag}"} <= names
    assert report.results["03_markov"]["2d_axis1"]["planes"] == 6
    assert report.passed, [c for c in report.checks if not c.passed]


def test_raising_criterion_is_recorded_as_failure(monkeypatch):
    def broken(report, quick, seed):
        raise ConvergenceError("no plateau")

    monkeypatch.setattr(acceptance, "CRITERIA", (Criterion(3, "markov", broken), CRITERIA[0]))
    report = run_acceptance(_report(), quick=True)
    assert report.results["03_markov"] == {"error": "no plateau"}
    failed = [c for c in report.checks if not c.passed]
    assert [c.name for c in failed] == ["03.error"]
    assert failed[0].detail == "ConvergenceError: no plateau"
    assert "01_hafnian" in report.results
    assert report.verdict == "fail"


def test_results_depend_only_on_seed():
    first = run_acceptance(_report(seed=4), quick=True, only={1, 8}).results
    second = run_acceptance(_report(seed=4), quick=True, only={1, 8}).results
    assert first == second


@pytest.mark.slow
def test_quick_suite_passes():
    report = run_acceptance(_report(seed=20250101), quick=True)
    failed = [c.name for c in report.checks if not c.passed]
    assert not failed
    assert len(report.results) == len(CRITERIA)
