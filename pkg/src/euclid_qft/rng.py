"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *key)`` through a
``SeedSequence`` spawn key, so a stream depends only on its key and never on
how many other streams were drawn before it. Chains, sweeps and sample batches
therefore reproduce bit-for-bit regardless of scheduling.
"""

import os

import numpy as np

SEED_ENV_VAR = "EUCLID_QFT_SEED"
DEFAULT_SEED = 20240101


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def resolve_seed(seed: int | None) -> int:
    """Explicit seed, else ``EUCLID_QFT_SEED``, else the package default."""
    if seed is not None:
        return int(seed)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed:
        try:
            return int(env_seed)
        except ValueError:
            raise ValueError(f"{SEED_ENV_VAR} must be an integer, got: {env_seed!r}") from None
    return DEFAULT_SEED
