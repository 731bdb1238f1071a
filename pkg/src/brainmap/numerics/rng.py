"""Order-independent random streams keyed by (seed, stream path)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: tuple = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                    spawn_key=tuple(int(i) & (2**64 - 1) for i in self.stream_id))
        return np.random.Generator(np.random.Philox(ss))

    def int_seed(self) -> int:
        """A 32-bit seed for libraries that only accept integers."""
        return int(self.generator().integers(0, 2**31 - 1))


def stream(seed: int, *ids: int) -> np.random.Generator:
    return RngStream(int(seed)).child(*ids).generator()
