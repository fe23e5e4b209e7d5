"""Named random substreams.

Every random draw in the toolkit flows from a single user-facing seed
through named substreams, so adding a consumer never perturbs the draws
of another.  Stream names are hashed with CRC32, which is stable across
platforms and Python versions.
"""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for (seed, name)."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag]))
