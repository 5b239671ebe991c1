"""
Deterministic seed derivation.

Every random stream in rdforest is a PCG64 generator seeded with

    derive_seed(master, *parts) = first 8 bytes of sha256("master:part1:part2…")

read as an unsigned big-endian integer. sha256 is stable across processes
and platforms (Python's hash() is salted per run), and PCG64 output is
portable, so a (master, parts) pair always reproduces the same stream no
matter which worker or how many workers consume it.
"""

import hashlib

import numpy as np


def derive_seed(master, *parts):
    key = ":".join(str(p) for p in (master, *parts))
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(master, *parts):
    """numpy Generator for the stream named by (master, *parts)."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *parts)))


def array_digest(arr):
    """Short hex digest of an array's bytes; used to name per-side streams."""
    a = np.ascontiguousarray(arr, dtype=np.float64)
    return hashlib.sha256(a.tobytes() + str(a.shape).encode()).hexdigest()[:16]
