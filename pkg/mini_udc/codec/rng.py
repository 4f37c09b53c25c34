"""Seeded counter-based substreams.

Every stream is a Philox generator keyed by blake2b(seed, label); block b of
a stream starts at counter b << 64, so blocks can be regenerated in any order.
"""

from __future__ import annotations

import hashlib

import numpy as np

from mini_udc.codec.bitcoder import RNG_PHILOX_BLAKE2B
from mini_udc.errors import InvalidInputError

RNG_ID = RNG_PHILOX_BLAKE2B
SEED_BITS = 64


def check_seed(seed: int) -> int:
    if not 0 <= seed < 2**SEED_BITS:
        raise InvalidInputError(f"seed must lie in [0, 2^64), got {seed}")
    return int(seed)


def derive_key(seed: int, label: str) -> int:
    """128-bit Philox key for the named substream of ``seed``."""
    h = hashlib.blake2b(check_seed(seed).to_bytes(8, "big") + label.encode(), digest_size=16)
    return int.from_bytes(h.digest(), "big")


def derive_seed(seed: int, label: str) -> int:
    """A fresh 64-bit seed for an independent child experiment."""
    return derive_key(seed, label) >> 64


def block_generator(seed: int, label: str, block: int = 0) -> np.random.Generator:
    if block < 0:
        raise InvalidInputError(f"negative block {block}")
    return np.random.Generator(np.random.Philox(key=derive_key(seed, label), counter=block << 64))
