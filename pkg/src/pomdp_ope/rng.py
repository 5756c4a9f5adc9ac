"""Deterministic child random streams keyed by (master seed, purpose tag, index)."""

import zlib

import numpy as np


def tag_key(tag):
    return zlib.crc32(str(tag).encode("utf-8"))


def _key(tag, indices):
    # zigzag so negative indices (e.g. policy weights) stay distinct and non-negative
    return (tag_key(tag),) + tuple(2 * int(i) if int(i) >= 0 else -2 * int(i) - 1 for i in indices)


def derive_stream(master_seed, tag, *indices):
    """Generator whose state depends only on the arguments, never on call order."""
    key = _key(tag, indices)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))


def derive_seed(master_seed, tag, *indices):
    key = _key(tag, indices)
    return int(np.random.SeedSequence(int(master_seed), spawn_key=key).generate_state(1)[0])
