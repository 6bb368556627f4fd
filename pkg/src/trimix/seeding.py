"""Named random sub-streams derived from a single run seed.

Every source of randomness (init, shuffle, dropout, synthetic data, ...)
pulls from its own named stream so toggling one feature never shifts the
draws of another.
"""

import hashlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 64-bit key for a stream name."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream of `seed`."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream_key(name)]))
