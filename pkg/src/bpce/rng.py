"""Deterministic per-replica random streams.

Replica ``r`` of an experiment seeded with ``master_seed`` always draws from
the same stream, no matter how replicas are scheduled across workers.
"""
from __future__ import annotations

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(check_seed(seed))))


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Stream for one replica, derived from ``(master_seed, replica)``."""
    ss = np.random.SeedSequence(check_seed(master_seed), spawn_key=(int(replica),))
    return np.random.Generator(np.random.PCG64(ss))
