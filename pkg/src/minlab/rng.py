"""Counter-based splittable random streams.

Every random draw in the package derives from a ``Seed`` -- a (root, stream)
pair of 64-bit integers -- through the Philox counter-based generator.  A
logical stream is the Philox key ``root + (stream << 64)``; chunk ``j`` of a
sampling job starts its 256-bit counter at ``j << 128``, so chunks own
disjoint counter ranges and can be generated in any order (or in parallel)
with bit-identical results.

Child streams for nested constructions (e.g. the two independent copies
behind a symmetrized family) are derived with a splitmix64 finalizer, which
gives independent-in-practice sequences without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# rows per Philox counter block; fixed so that chunk layout never depends on
# thread count
CHUNK_ROWS = 1 << 15


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class Seed:
    """Root/stream pair that fully determines all sampled bytes."""

    root: int
    stream: int = 0

    def __post_init__(self):
        for name in ("root", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not (0 <= int(v) <= _MASK64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v!r}")
        object.__setattr__(self, "root", int(self.root))
        object.__setattr__(self, "stream", int(self.stream))

    def child(self, tag: int) -> "Seed":
        """Derive a distinct stream for a sub-task; same root, mixed stream."""
        mixed = _splitmix64(self.stream ^ _splitmix64((tag & _MASK64) ^ self.root))
        return Seed(self.root, mixed)

    def to_dict(self) -> dict:
        return {"root": self.root, "stream": self.stream}

    @classmethod
    def from_dict(cls, d: dict) -> "Seed":
        return cls(int(d["root"]), int(d.get("stream", 0)))


def chunk_generator(seed: Seed, chunk: int) -> np.random.Generator:
    """Fresh generator for chunk ``chunk`` of the stream addressed by ``seed``."""
    key = seed.root | (seed.stream << 64)
    bitgen = np.random.Philox(key=key, counter=int(chunk) << 128)
    return np.random.Generator(bitgen)


def stream_generator(seed: Seed) -> np.random.Generator:
    """Generator for non-chunked uses (bootstrap resampling, strategy draws)."""
    return chunk_generator(seed, 0)
