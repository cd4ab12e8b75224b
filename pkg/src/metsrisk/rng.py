"""Seedable, splittable random-number streams.

Every stochastic routine in the package takes an explicit ``RngStream``.
A stream is identified by ``(seed, stream_id)``; identical identifiers
reproduce identical draw sequences bit-for-bit, and distinct stream ids
give statistically independent streams (one per MCMC chain, one per
simulated donor, ...).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngStream"]


def _component(value) -> int:
    """Stable 64-bit spawn-key component; strings hash deterministically."""
    if isinstance(value, str):
        return int.from_bytes(hashlib.sha256(value.encode()).digest()[:8], "little")
    return int(value)


class RngStream:
    """A deterministic random stream backed by numpy's Philox generator.

    Parameters
    ----------
    seed : int
        64-bit master seed.
    stream_id : int, str, or tuple of those
        Stream selector. Tuples address nested splits (chain 2's third
        child is ``(2, 3)``); string components name purposes.
    """

    def __init__(self, seed: int, stream_id=0):
        if isinstance(stream_id, (int, str)):
            stream_id = (stream_id,)
        self.seed = int(seed)
        self.stream_id = tuple(_component(s) for s in stream_id)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "RngStream":
        """Derive an independent sub-stream, reproducible from the parent id."""
        return RngStream(self.seed, self.stream_id + (int(index),))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
