"""Stable hashing primitives shared by every stage.

All token and gram hashing goes through XXH64 over UTF-8 bytes so results are
identical across platforms and Python versions (``hash()`` is salted per
process and must never be used here).
"""

import struct

import numpy as np
import xxhash

MASK64 = (1 << 64) - 1
FEATURE_BITS = 20
NUM_FEATURES = 1 << FEATURE_BITS  # 1,048,576

TOKEN_SEED = 0
GRAM_SEED = 0x5EED_6A4D
BAND_SEED = 0xB4ED_5EED


def hash64(data: bytes, seed: int = TOKEN_SEED) -> int:
    return xxhash.xxh64_intdigest(data, seed & MASK64)


def hash_text(text: str, seed: int = TOKEN_SEED) -> int:
    return xxhash.xxh64_intdigest(text.encode("utf-8"), seed & MASK64)


def splitmix64(x: int) -> int:
    """Scalar SplitMix64 finalizer (Steele, Lea & Flood constants)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorised SplitMix64 on uint64 arrays; wraps modulo 2**64."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def derive_seed(base_seed: int, *parts) -> int:
    """Derive a child seed from ``base_seed`` and a path of str/int parts.

    Strings are hashed with XXH64; ints are mixed directly. Used so one global
    seed fans out to per-stage and per-document streams.
    """
    state = splitmix64(base_seed & MASK64)
    for part in parts:
        if isinstance(part, str):
            value = hash_text(part)
        else:
            value = int(part) & MASK64
        state = splitmix64(state ^ value)
    return state


def uniform01(seed: int, counter: int) -> float:
    """Counter-based uniform draw on [0, 1) with 53 bits of resolution."""
    bits = splitmix64(splitmix64(seed & MASK64) ^ (counter & MASK64))
    return (bits >> 11) / float(1 << 53)


def pack_u64s(values) -> bytes:
    """Length-prefixed little-endian packing used for band keys."""
    values = list(values)
    return struct.pack(f"<I{len(values)}Q", len(values), *values)
