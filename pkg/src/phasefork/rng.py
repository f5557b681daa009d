"""Splittable counter-based random streams.

A stream is (key, counter): draw i of a stream is a pure function of both,
so streams can be replayed, split, and handed across threads without shared
state.  derive(key, tag) yields a child key; identical tags give identical
children, which is what lets checkpoint cloning stay a pure function while
fork orchestration decorrelates repeats by tag choice.

These helpers are pure Python on purpose: orchestration-level draws are rare,
and keeping one implementation here means kernel-level RNG (mirrored in both
backends) can be checked against it directly.
"""

from __future__ import annotations

from ._backend.pyref import (  # noqa: F401  (re-exported surface)
    MASK64,
    derive,
    mix64,
    randbelow,
    rng_u64,
    uniform01,
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def hash_tag(text: str) -> int:
    """FNV-1a of the utf-8 bytes; stable across runs and platforms."""
    h = _FNV_OFFSET
    for b in text.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def seed_key(root_seed: int, label: str) -> int:
    """Root key for a named top-level stream (e.g. one experiment cell)."""
    return derive(root_seed & MASK64, hash_tag(label))


class Stream:
    """Convenience stateful view over a (key, counter) pair."""

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = key & MASK64
        self.counter = counter & MASK64

    def next_u64(self) -> int:
        u = rng_u64(self.key, self.counter)
        self.counter = (self.counter + 1) & MASK64
        return u

    def next_float(self) -> float:
        return uniform01(self.next_u64())

    def next_below(self, n: int) -> int:
        return randbelow(self.next_u64(), n)

    def split(self, tag: int) -> "Stream":
        return Stream(derive(self.key, tag))

    def split_label(self, label: str) -> "Stream":
        return self.split(hash_tag(label))
