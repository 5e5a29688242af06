import textwrap

import pytest

from euclid_qft.errors import ConfigError
from euclid_qft.config import (
    default_config,
    load_config,
    parse_coefficients,
    parse_config,
    parse_points,
)
from euclid_qft.lattice import Boundary
from euclid_qft.rng import DEFAULT_SEED, SEED_ENV_VAR

FULL = textwrap.dedent(
    """\
    [geometry]
    dim = 2
    extents = 6, 4
    spacing_length = 0.5
    boundary = dirichlet

    [model]
    mass_inverse_length = 1.5
    # coefficients of phi^0 .. phi^n
    polynomial = 0, 0, 0, 0, 0.1

    [run]
    method = mcmc
    samples = 5000
    sweeps = 400  # short
    seed = 17
    points = 0,0; 1,0
    """
)


def test_parse_full_config():
    config = parse_config(FULL)
    assert config.geometry.extents == (6, 4)
    assert config.geometry.boundary is Boundary.DIRICHLET
    assert config.geometry.spacing == 0.5
    assert config.mass == 1.5
    assert config.polynomial.coefficients == (0.0, 0.0, 0.0, 0.0, 0.1)
    assert config.method == "mcmc"
    assert config.sweeps == 400
    assert config.points == ((0, 0), (1, 0))
    assert config.resolved_seed == 17


def test_empty_config_is_default():
    config = parse_config("")
    assert config.geometry == default_config().geometry
    assert config.polynomial.is_zero


def test_seed_falls_back_to_environment(monkeypatch):
    config = parse_config("[run]\nmethod = reweight\n")
    assert config.resolved_seed == DEFAULT_SEED
    monkeypatch.setenv(SEED_ENV_VAR, "99")
    assert config.resolved_seed == 99
    assert config.echo()["run"]["seed"] == 99


def test_parse_points_and_coefficients():
    assert parse_points("0,0; 1,2;") == ((0, 0), (1, 2))
    assert parse_points("") == ()
    assert parse_coefficients("0, 0, 1.5,") == [0.0, 0.0, 1.5]


@pytest.mark.parametrize(
    "text, line, field",
    [
        ("[model]\nmass_inverse_length = 1\n\n[lattice]\ndim = 2\n", 4, "lattice"),
        ("[run]\nsamples = 10\nwarmup = 3\n", 3, "run.warmup"),
        ("[run]\nmethod = mcmc\nsamples = many\n", 3, "run.samples"),
        ("[run]\nsamples = 0\n", 2, "run.samples"),
        ("[run]\ntherm_frac = 1.5\n", 2, "run.therm_frac"),
        ("[model]\n\nmass_inverse_length = -1\n", 3, "model.mass_inverse_length"),
        ("[model]\npolynomial = 1, 0, 1\n", 2, "model.polynomial"),
        ("[model]\npolynomial = 0, 0, 0, 1\n", 2, "model.polynomial"),
        ("[geometry]\ndim = 2\nextents = 4, 1\n", 3, "geometry.extents"),
        ("[geometry]\ndim = 3\nextents = 4, 4, 4\n", 2, "geometry.dim"),
        ("[geometry]\nboundary = open\n", 2, "geometry.boundary"),
        ("[run]\npoints = 0,0; 9,0\n", 2, "run.points"),
        ("[run]\nmethod = exact\n", 2, "run.method"),
    ],
)
def test_config_errors_point_at_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert info.value.field == field
    assert str(info.value).startswith(f"[line {line}, {field}]")


def test_duplicate_key_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config("[run]\nsamples = 1\nsamples = 2\n")
    assert info.value.line == 3


def test_overrides_are_validated():
    config = default_config()
    updated = config.with_overrides(samples=50, seed=None, method="mcmc")
    assert updated.samples == 50
    assert updated.method == "mcmc"
    assert updated.seed is None
    with pytest.raises(ConfigError) as info:
        config.with_overrides(chains=0)
    assert info.value.field == "run.chains"


def test_load_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(FULL, encoding="utf-8")
    assert load_config(path).samples == 5000
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")


def test_echo_is_plain_data():
    echo = parse_config(FULL).echo()
    assert echo["geometry"]["extents"] == "6, 4"
    assert echo["model"]["polynomial"] == [0.0, 0.0, 0.0, 0.0, 0.1]
    assert echo["run"]["points"] == [[0, 0], [1, 0]]
