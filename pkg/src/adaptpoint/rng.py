"""Deterministic random-stream plumbing.

Every random draw in the library flows through an :class:`RngStream`: a
(master seed, stream id) pair mapped to an independent PCG64 generator.
Identical (seed, stream, draw sequence) replays bit-identically across runs
and platforms; distinct stream ids give statistically independent streams.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def mix64(*parts: int) -> int:
    """Collapse a tuple of integers into one 64-bit stream label.

    Used to derive sub-stream ids such as (sample index, family, severity).
    Order-sensitive: mix64(1, 2) != mix64(2, 1).
    """
    h = len(parts) & _MASK64
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK64))
    return h


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by (seed, stream)."""

    seed: int
    stream: int = 0

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= int(self.stream) <= _MASK64:
            raise ValueError(f"stream must be a 64-bit unsigned integer, got {self.stream}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, *parts: int) -> "RngStream":
        """Child stream labelled by this stream's id mixed with `parts`."""
        return RngStream(self.seed, mix64(self.stream, *parts))
