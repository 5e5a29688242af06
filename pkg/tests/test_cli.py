import json
import logging

import pytest

from euclid_qft import __version__, cli
from euclid_qft.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, dispatch
from euclid_qft.db import list_runs, read_db


@pytest.fixture(autouse=True)
def restore_package_logger():
    logger = logging.getLogger("euclid_qft")
    handlers, level = logger.handlers[:], logger.level
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)


def test_version(capsys):
    assert dispatch(["--version"]) == EXIT_OK
    assert __version__ in capsys.readouterr().out


def test_usage_errors(capsys):
    assert dispatch([]) == EXIT_CONFIG
    assert dispatch(["teleport"]) == EXIT_CONFIG
    assert dispatch(["partition", "--extents", "four"]) == EXIT_CONFIG


def test_free_partition_function(capsys):
    assert dispatch(["partition", "--samples", "500", "--seed", "3"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["command"] == "partition"
    assert report["seed"] == 3
    assert report["results"]["Z"] == 1.0
    assert report["verdict"] == "pass"
    assert report["config"]["geometry"]["extents"] == [4, 4]


def test_quadrature_partition_function(capsys):
    argv = ["partition", "--extents", "2,2", "--method", "quadrature", "--nodes", "8", "--lambda", "0.1"]
    assert dispatch(argv) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["results"]["Z"] >= 1.0


def test_propagator_defaults_to_csv(capsys):
    assert dispatch(["propagator", "--extents", "16", "--boundary", "dirichlet"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "# schema_version=1"
    assert lines[1] == "# command=propagator"
    assert lines[5] == "x_length,lattice,continuum"
    assert len(lines) == 6 + 9


def test_csv_refused_for_scalar_reports(capsys):
    assert dispatch(["partition", "--format", "csv"]) == EXIT_CONFIG
    assert "scalar report" in capsys.readouterr().err


def test_report_written_to_file(tmp_path, capsys):
    out = tmp_path / "reports" / "hafnian.json"
    assert dispatch(["hafnian", "--order", "4", "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out == ""
    report = json.loads(out.read_text())
    assert report["results"]["order"] == 4
    assert report["checks"][0]["name"] == "recursion_vs_matchings"


def test_explicit_matrix(capsys):
    assert dispatch(["hafnian", "--matrix", "0,1,2,3; 1,0,4,5; 2,4,0,6; 3,5,6,0"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["results"]["hafnian"] == pytest.approx(1 * 6 + 2 * 5 + 3 * 4)


def test_config_errors_carry_line_and_field(tmp_path, capsys):
    config = tmp_path / "run.ini"
    config.write_text("[geometry]\nextents = 4, 4\nbogus = 1\n")
    assert dispatch(["partition", "--config", str(config)]) == EXIT_CONFIG
    assert "[config] [line 3, geometry.bogus]" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["markov-check", "--extents", "8,8"],
        ["schwinger"],
        ["partition", "--lambda", "0.1", "--polynomial", "0,0,0,0,0.1"],
        ["partition", "--polynomial", "0,0,0,-1"],
        ["partition", "--mass", "-1"],
        ["verify-all", "--only", "99"],
        ["partition", "--config", "missing.ini"],
    ],
)
def test_invalid_runs_exit_with_config_code(argv, capsys):
    assert dispatch(argv) == EXIT_CONFIG
    assert capsys.readouterr().err.startswith("[config]")


def test_markov_check_prints_json_rows(capsys):
    assert dispatch(["markov-check", "--extents", "8,6", "--boundary", "dirichlet", "--probes", "4"]) == EXIT_OK
    rows = json.loads(capsys.readouterr().out)["results"]
    assert [r["plane"] for r in rows] == [1, 2, 3, 4, 5, 6]
    for row in rows:
        assert set(row) == {"plane", "residual_projection", "residual_conditional"}
        assert row["residual_projection"] <= 1e-8
        assert row["residual_conditional"] <= 1e-8


def test_markov_check_as_csv(capsys):
    argv = ["markov-check", "--extents", "4,4", "--boundary", "dirichlet", "--format", "csv"]
    assert dispatch(argv) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[5] == "plane,residual_projection,residual_conditional"
    assert len(lines) == 6 + 2


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("1,0.5\n0.5,1\n", 0.5),
        ("0,1,2,3\n1,0,4,5\n2,4,0,6\n3,5,6,0\n", 28.0),
        ("2\n", 0.0),
    ],
)
def test_hafnian_of_gram_file(tmp_path, capsys, text, expected):
    path = tmp_path / "gram.csv"
    path.write_text(text)
    assert dispatch(["hafnian", str(path)]) == EXIT_OK
    results = json.loads(capsys.readouterr().out)["results"]
    assert results["order"] == len(text.splitlines())
    assert results["hafnian"] == pytest.approx(expected)


@pytest.mark.parametrize(
    "text",
    ["1,2,3\n4,5,6\n", "1,2\n3,1\n", "1,x\nx,1\n", "1,2\n2\n"],
)
def test_malformed_gram_file(tmp_path, capsys, text):
    path = tmp_path / "gram.csv"
    path.write_text(text)
    assert dispatch(["hafnian", str(path)]) == EXIT_CONFIG
    assert capsys.readouterr().err.startswith("[config] [gram]")


def test_missing_gram_file(tmp_path, capsys):
    assert dispatch(["hafnian", str(tmp_path / "absent.csv")]) == EXIT_CONFIG
    assert "cannot read Gram matrix" in capsys.readouterr().err


def test_nelson_symmetry(capsys):
    assert dispatch(["nelson", "--l", "1", "--t", "3", "--nodes", "8", "--lambda", "0.1"]) == EXIT_OK
    results = json.loads(capsys.readouterr().out)["results"]
    assert results["residual"] < 1e-8


def test_transfer(capsys):
    assert dispatch(["transfer", "--n-s", "1", "--n-t", "3", "--nodes", "12", "--lambda", "0.1"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    names = [c["name"] for c in report["checks"]]
    assert "fkn_identity" in names
    assert report["results"]["min_component"] > 0


def test_record_compares_with_baseline(capsys):
    assert dispatch(["hafnian", "--order", "4", "--seed", "9", "--record"]) == EXIT_OK
    assert "(first of its kind)" in capsys.readouterr().err
    assert dispatch(["hafnian", "--order", "4", "--seed", "9", "--record"]) == EXIT_OK
    assert "body identical to run #1" in capsys.readouterr().err
    with read_db() as conn:
        assert [r["seed"] for r in list_runs(conn, "hafnian")] == [9, 9]


def test_verbose_logging_level(capsys):
    dispatch(["hafnian", "--order", "2", "-v"])
    assert logging.getLogger("euclid_qft").level == logging.DEBUG


def test_verify_all_subset(capsys):
    assert dispatch(["verify-all", "--quick", "--only", "1,2"]) == EXIT_OK
    captured = capsys.readouterr()
    assert "[PASS] 01.recursion_vs_matchings" in captured.err
    assert captured.err.rstrip().endswith("[verify-all] OK")
    assert set(json.loads(captured.out)["results"]) == {"01_hafnian", "02_magic_formula"}


def test_failing_verdict_exits_one(monkeypatch, capsys):
    monkeypatch.setattr(cli, "hafnian_bruteforce", lambda gram: 1e6)
    assert dispatch(["hafnian", "--order", "4"]) == EXIT_FAIL
    assert json.loads(capsys.readouterr().out)["verdict"] == "fail"
