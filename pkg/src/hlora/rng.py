"""Deterministic random streams built on counter-based Philox keys.

Every stochastic choice in the package draws from a :class:`SeededRng`
value: a (master seed, stream id) pair keying a Philox bit generator.
Stream ids are derived by hashing short textual tags, so adding a new
consumer of randomness can never shift the draws seen by an existing
one, and clients trained in parallel see exactly the draws they would
see sequentially.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_U64 = 1 << 64


def _mix_tag(parts: tuple) -> int:
    """Hash a tuple of strings/ints to a stable 64-bit stream id."""
    tag = "/".join(str(p) for p in parts)
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeededRng:
    """Value-semantics handle for one deterministic random stream.

    Two instances with equal (seed, stream) produce identical draw
    sequences on every platform and in every process. Instances are
    immutable; all draw state lives in generators created on demand.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name, value in (("seed", self.seed), ("stream", self.stream)):
            if not (0 <= int(value) < _U64):
                raise ValueError(f"SeededRng {name} must be a 64-bit unsigned integer, got {value}")

    def derive(self, *parts) -> "SeededRng":
        """Return a child stream keyed by this stream plus a tag.

        Parts may be strings or integers, e.g. ``rng.derive("train", round_index, client_id)``.
        """
        if not parts:
            raise ValueError("derive() requires at least one tag part")
        return SeededRng(self.seed, _mix_tag((self.stream,) + parts))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))
