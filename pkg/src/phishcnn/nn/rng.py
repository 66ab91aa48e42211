"""Seeded random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, seeded
through ``SeedSequence(seed, spawn_key=stream_id)``. PCG64 and SeedSequence
produce the same sequences on every platform numpy supports, so a
``(seed, stream_id)`` pair fully identifies a sequence of values.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "numpy.PCG64 via SeedSequence(seed, spawn_key=stream_id)"


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    ``derive`` creates an independent sub-stream whose identity depends only
    on the parent's identity and the given ids, never on how many values the
    parent has already produced.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int, stream_id: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.stream_id = tuple(int(i) for i in stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def derive(self, *ids: int) -> RngStream:
        return RngStream(self.seed, self.stream_id + tuple(ids))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
