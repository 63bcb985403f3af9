"""Counter-style seed derivation.

Every random stream in a run is keyed by a path of names and indices hashed
together with the master seed, so adding a client or a regime never shifts
the stream of any other component.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *keys: object) -> int:
    """Return a 63-bit seed for the component path ``keys`` under ``master``."""
    text = "/".join([str(int(master))] + [str(k) for k in keys])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def rng_for(master: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
