import numpy as np
import pytest

from euclid_qft.rng import DEFAULT_SEED, SEED_ENV_VAR, resolve_seed, stream


def test_streams_depend_only_on_key():
    first = stream(7, 2, 5).standard_normal(16)
    stream(7, 2, 4).standard_normal(1000)
    assert np.array_equal(stream(7, 2, 5).standard_normal(16), first)


def test_distinct_keys_give_distinct_streams():
    a = stream(7, 0).standard_normal(8)
    assert not np.array_equal(a, stream(7, 1).standard_normal(8))
    assert not np.array_equal(a, stream(8, 0).standard_normal(8))
    assert not np.array_equal(stream(7).standard_normal(8), stream(7, 0).standard_normal(8))


def test_negative_seed_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        stream(-1)


def test_seed_resolution(monkeypatch):
    assert resolve_seed(None) == DEFAULT_SEED
    monkeypatch.setenv(SEED_ENV_VAR, "42")
    assert resolve_seed(None) == 42
    assert resolve_seed(3) == 3
    monkeypatch.setenv(SEED_ENV_VAR, "forty-two")
    with pytest.raises(ValueError, match=SEED_ENV_VAR):
        resolve_seed(None)
