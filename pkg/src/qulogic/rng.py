"""Named random streams derived from a single root seed.

Each stream is keyed by a path of names, e.g. ``stream(seed, "run", 3,
"distributor", 1)``.  Streams never share state, so adding an extra
adversary or agent does not shift the draws of unrelated components.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _name_word(name) -> int:
    return int.from_bytes(hashlib.blake2b(repr(name).encode(), digest_size=8).digest(), "big")


def stream(seed: int, *names) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_name_word(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *names) -> int:
    """A 64-bit integer seed for sub-components that want a plain int."""
    return int(stream(seed, *names).integers(0, 2**63))
