"""Deterministic random streams keyed by seed, use-site name, and counter.

Identical (seed, stream, counter) always reproduces the same draws, on any
platform, regardless of how many other streams were consumed in between.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RngState:
    """A 64-bit seed plus named, independently seeded draw streams.

    ``stream(name)`` memoizes a generator whose position advances as it is
    consumed; two RngState objects built with the same seed replay the same
    sequence per stream.  ``generator(name, counter)`` returns a fresh
    generator pinned to an explicit counter for one-shot draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = self.generator(name, 0)
            self._streams[name] = gen
        return gen

    def generator(self, name: str, counter: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence([self.seed, _stream_key(name), int(counter) & _MASK64])
        return np.random.default_rng(seq)

    def derive_seed(self, name: str) -> int:
        """A stable child seed for a named sub-task (for example an action)."""
        return int(self.generator(name, 0).integers(0, _MASK64, dtype=np.uint64))


def uniform_init(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Layer initialization: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / float(np.sqrt(fan_in))
    return rng.uniform(-bound, bound, size=shape)
