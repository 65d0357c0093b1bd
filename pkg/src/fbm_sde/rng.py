"""Counter-based random streams.

Every Monte Carlo path gets its own Philox stream whose key is derived from
the master seed and whose starting counter encodes ``(path_index, domain)``.
A stream is therefore a pure function of ``(master_seed, path_index,
domain)``, independent of how paths are scheduled across threads.
"""

from __future__ import annotations

import numpy as np

# Stream domains: independent noise sources attached to the same path index.
DRIVER = 0
AUXILIARY_GAUSSIAN = 1
AUXILIARY_BROWNIAN = 2
FRESH_ENDPOINT = 3

_MASK64 = (1 << 64) - 1


def _key(master_seed: int) -> np.ndarray:
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    return np.random.SeedSequence(master_seed & ((1 << 128) - 1)).generate_state(2, np.uint64)


def path_stream(master_seed: int, path_index: int, domain: int = DRIVER) -> np.random.Generator:
    """Return the generator for one path.

    The low two counter words are left at zero so each stream has 2**128
    Philox blocks before it could run into its neighbour.
    """
    if path_index < 0 or domain < 0:
        raise ValueError("path_index and domain must be non-negative")
    counter = np.array([0, 0, path_index & _MASK64, domain & _MASK64], dtype=np.uint64)
    bitgen = np.random.Philox(key=_key(master_seed), counter=counter)
    return np.random.Generator(bitgen)


def seed_tag(master_seed: int, path_index: int, domain: int = DRIVER) -> str:
    return f"philox:{master_seed}:{path_index}:{domain}"
