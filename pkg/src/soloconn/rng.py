"""Seeded PRNG substreams.

One root seed per run; every consumer (init, dropout, data, ...) pulls from
its own named substream so that changing one knob (say, the adapter rank)
cannot shift the random draws seen by an unrelated component.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Return a Generator deterministically derived from (seed, name)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _name_key(name)])))


def derive_seed(seed: int, name: str) -> int:
    """Fold a name into a seed, for handing a whole run its own root seed."""
    ss = np.random.SeedSequence([seed, _name_key(name)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))


class RngStreams:
    """Lazily-created named substreams hanging off one root seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = substream(self.seed, name)
        return self._streams[name]
