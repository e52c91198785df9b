"""Deterministic RNG construction and seed derivation.

All randomness in the toolkit flows through Philox (a 64-bit counter-based
bit generator), so any draw is reproducible from its integer seed alone,
independent of platform or call history. Stage seeds are derived from the
master seed by FNV-1a hashing so that no two stages share a stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def make_rng(seed: int, *branch: int) -> np.random.Generator:
    """Philox generator for `seed`, optionally branched by integer keys.

    Two calls with the same (seed, branch) yield bit-identical streams;
    distinct branches on the same seed yield independent streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=branch)
    return np.random.Generator(np.random.Philox(ss))


def stage_seed(master_seed: int, stage_name: str) -> int:
    """Derive a 64-bit per-stage seed from the master seed and stage name."""
    payload = int(master_seed & _MASK64).to_bytes(8, "little") + stage_name.encode("utf-8")
    return fnv1a_64(payload)
