"""Named, order-independent random substreams derived from one root seed."""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def substream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for ``name`` that does not depend on which other streams exist."""
    if root_seed < 0 or root_seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=(_name_key(name),))
    return np.random.Generator(np.random.PCG64(ss))
