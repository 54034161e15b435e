"""Seeded random streams.

All randomness goes through Philox4x64-10 (numpy's counter-based bit
generator) keyed by a SeedSequence of the run seed plus CRC32 tags, so
independent sub-streams are derived by name rather than by call order.
"""
import zlib

import numpy as np

PRNG_NAME = "philox4x64-10"


def _tag(t) -> int:
    if isinstance(t, (int, np.integer)):
        return int(t) & 0xFFFFFFFF
    return zlib.crc32(str(t).encode())


def rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(_tag, tags)])))


def child_seed(seed: int, *tags) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``tags``."""
    return int(rng(seed, *tags).integers(0, 2**63 - 1))
