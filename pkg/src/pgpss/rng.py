"""Counter-based random draws keyed by block and stream position.

A draw depends only on the seed and its stream key, never on global call order,
so sequential and partitioned runs see the same values per block and a rolled
back block re-draws exactly what it drew before. Draws made while a transaction
moves may carry a token naming that move; hashed sources prefer it over the
per-block index, which scripted sources keep replaying in order.
"""

from __future__ import annotations

import hashlib
from collections.abc import Hashable, Mapping, Sequence
from typing import Protocol

from pgpss.model import BlockRef

_SCALE = float(1 << 53)


class DrawSource(Protocol):
    def ticks(self, ref: BlockRef, index: int, low: int, high: int, *, token: Hashable | None = None) -> int:
        """Uniform integer in [low, high] for the given stream key."""

    def unit(self, ref: BlockRef, index: int, *, token: Hashable | None = None) -> float:
        """Uniform real in [0, 1) for the given stream key."""


class CounterRng:
    """Hash-based counter RNG: blake2b(seed, partition, block, token or index)."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def _u64(self, ref: BlockRef, index: int, token: Hashable | None) -> int:
        position = index if token is None else token
        key = f"{self.seed}:{ref.partition_no}:{ref.block_no}:{position}".encode()
        return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")

    def ticks(self, ref: BlockRef, index: int, low: int, high: int, *, token: Hashable | None = None) -> int:
        span = high - low + 1
        return low + self._u64(ref, index, token) % span

    def unit(self, ref: BlockRef, index: int, *, token: Hashable | None = None) -> float:
        return (self._u64(ref, index, token) >> 11) / _SCALE


class ScriptedDraws:
    """Replays fixed per-block draw sequences, falling back to another source."""

    def __init__(
        self,
        script: Mapping[BlockRef, Sequence[float]],
        fallback: DrawSource | None = None,
    ) -> None:
        self.script = {ref: list(values) for ref, values in script.items()}
        self.fallback = fallback or CounterRng(0)

    def _value(self, ref: BlockRef, index: int) -> float | None:
        values = self.script.get(ref)
        if values is not None and index < len(values):
            return values[index]
        return None

    def ticks(self, ref: BlockRef, index: int, low: int, high: int, *, token: Hashable | None = None) -> int:
        value = self._value(ref, index)
        if value is None:
            return self.fallback.ticks(ref, index, low, high, token=token)
        if not low <= value <= high:
            raise ValueError(f"scripted draw {value} for {ref} outside [{low},{high}]")
        return int(value)

    def unit(self, ref: BlockRef, index: int, *, token: Hashable | None = None) -> float:
        value = self._value(ref, index)
        return self.fallback.unit(ref, index, token=token) if value is None else float(value)
