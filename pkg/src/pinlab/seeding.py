"""Deterministic per-replica random streams.

Every stream is a child of ``SeedSequence(master_seed)`` addressed by
``(crc32(experiment name), replica index)``, so adding replicas or
experiments never perturbs existing streams.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def replica_rng(master_seed: int, name: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(_name_key(name), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def experiment_rng(master_seed: int, name: str) -> np.random.Generator:
    """Single stream for an experiment that does not loop over replicas."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(_name_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


def map_chunks(fn, n_items: int, threads: int = 1, chunk: int = 256):
    """Apply ``fn(start, stop)`` over consecutive chunks and concatenate in order."""
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda ab: fn(*ab), bounds))
    return np.concatenate(parts) if parts else np.empty(0)
