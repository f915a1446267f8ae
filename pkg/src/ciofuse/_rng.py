"""Counter-based random streams keyed by (base seed, purpose tag, index...)."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *tags: object) -> int:
    """Hash a base seed and a sequence of tags into a 64-bit child seed."""
    h = hashlib.sha256(str(int(base_seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(repr(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(base_seed: int, *tags: object) -> np.random.Generator:
    """Philox generator whose key is derived from ``(base_seed, *tags)``.

    Two calls with the same arguments always yield identical streams, and the
    stream does not depend on how many other streams were created before it.
    """
    key = derive_seed(base_seed, *tags)
    return np.random.Generator(np.random.Philox(key=key))
