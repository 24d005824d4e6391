"""Counter-based random streams.

Every draw re-keys a Philox generator with (seed, counter), so a given
(seed, counter) pair produces the same values on any platform and any
call history. Forked streams are derived by hashing string labels, which
keeps independent consumers (corpus streams, chain segments) stable when
unrelated consumers are added or removed.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_U64 = (1 << 64) - 1


@dataclass
class RngState:
    seed: int
    counter: int = 0

    def _next_generator(self) -> np.random.Generator:
        key = (self.seed & _U64) << 64 | (self.counter & _U64)
        self.counter += 1
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, *shape) -> np.ndarray:
        return self._next_generator().standard_normal(shape)

    def uniform(self, low: float, high: float, *shape) -> np.ndarray:
        return self._next_generator().uniform(low, high, shape)

    def integers(self, low: int, high: int, *shape) -> np.ndarray:
        return self._next_generator().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def fork(self, *labels) -> "RngState":
        return RngState(derive_seed(self.seed, *labels))


def derive_seed(seed: int, *labels) -> int:
    """Stable 63-bit seed derived from a base seed and string/int labels."""
    text = ":".join([str(seed)] + [str(l) for l in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)
