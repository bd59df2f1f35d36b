"""Named random substreams derived from one master seed.

Every source of randomness in a run (data generation, parameter init,
action sampling, dropout masks) pulls from its own named stream so that
components stay individually reproducible no matter what the others consume.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 64-bit key for a stream name (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the (seed, name) stream; identical inputs, identical stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_key(name),))
    return np.random.Generator(np.random.PCG64(ss))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's state."""
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
