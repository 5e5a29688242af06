import pytest

from euclid_qft.covariance import build_covariance
from euclid_qft.db import DB_ENV_VAR
from euclid_qft.lattice import make_geometry
from euclid_qft.rng import SEED_ENV_VAR


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Point the run archive at a temporary file and clear the seed override."""
    monkeypatch.setenv(DB_ENV_VAR, str(tmp_path / "runs.db"))
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)


@pytest.fixture
def chain_1d():
    return make_geometry(1, [16], 1.0, "dirichlet")


@pytest.fixture
def torus_4x4():
    return make_geometry(2, [4, 4], 1.0, "periodic")


@pytest.fixture
def box_8x8():
    return make_geometry(2, [8, 8], 1.0, "dirichlet")


@pytest.fixture
def torus_covariance(torus_4x4):
    return build_covariance(torus_4x4, 1.0)


@pytest.fixture
def box_covariance(box_8x8):
    return build_covariance(box_8x8, 1.0)
