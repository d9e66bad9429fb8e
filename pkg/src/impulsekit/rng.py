"""Counter-keyed random streams.

Every random draw in the engine comes from a Philox generator whose key is
derived from ``(seed, *prefix)`` by :class:`numpy.random.SeedSequence` and
whose starting counter encodes ``(replication, slot)`` in its high words, so
each stream owns a disjoint block of ``2**128`` counter values. No generator
is shared between replications or cycles, so a replication produces the
same numbers whichever worker runs it.

Slot layout for one replication::

    slot 0        replication-level draws (random initial state)
    slot k + 1    cycle k: path noise, then the impulse ending the cycle
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class Streams:
    seed: int
    prefix: tuple[int, ...] = ()

    def __post_init__(self):
        if int(self.seed) < 0:
            raise ValueError("seed must be a nonnegative integer")

    @cached_property
    def _key(self) -> np.ndarray:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.prefix)
        return ss.generate_state(2, np.uint64)

    def _generator(self, rep: int, slot: int) -> np.random.Generator:
        if rep < 0 or slot < 0:
            raise ValueError("stream coordinates must be nonnegative")
        return np.random.Generator(np.random.Philox(key=self._key, counter=(0, 0, slot, rep)))

    def seat(self, gen: np.random.Generator, rep: int, slot: int) -> np.random.Generator:
        """Reset ``gen`` (a Philox generator from this family) onto stream ``(rep, slot)``.

        The result draws exactly what a fresh ``_generator(rep, slot)`` would,
        without paying for a new bit generator.
        """
        if rep < 0 or slot < 0:
            raise ValueError("stream coordinates must be nonnegative")
        gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array((0, 0, slot, rep), dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return gen

    def seat_cycle(self, gen: np.random.Generator, rep: int, k: int) -> np.random.Generator:
        return self.seat(gen, rep, k + 1)

    def replication(self, rep: int) -> np.random.Generator:
        return self._generator(rep, 0)

    def cycle(self, rep: int, k: int) -> np.random.Generator:
        return self._generator(rep, k + 1)

    def child(self, *key: int) -> "Streams":
        """Independent family, e.g. one per optimizer sweep."""
        return Streams(self.seed, self.prefix + tuple(int(k) for k in key))

    def auxiliary(self, *key: int) -> np.random.Generator:
        """Generator for work outside the replication layout (permutations etc.)."""
        return self.child(2**31 - 1, *key)._generator(0, 0)


def as_streams(stream) -> Streams:
    if isinstance(stream, Streams):
        return stream
    if isinstance(stream, (int, np.integer)):
        return Streams(int(stream))
    raise TypeError(f"expected Streams or integer seed, got {type(stream).__name__}")
