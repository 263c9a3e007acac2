"""Deterministic random number generation.

One fixed, portable generator (PCG64) everywhere. Parallel replicas get
substreams derived by XOR-ing the replica index into the base seed, so a
run is reproducible regardless of worker scheduling.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "pcg64"
_MASK64 = (1 << 64) - 1


class Rng:
    """Seeded wrapper around numpy's PCG64 generator.

    Identical seeds produce identical streams on every platform. The
    instance is stateful (draws advance it); derive independent
    substreams with :meth:`substream` before handing one to a worker.
    """

    __slots__ = ("seed", "algorithm", "_gen")

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        self.seed = seed
        self.algorithm = ALGORITHM
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def substream(self, index: int) -> "Rng":
        """Fresh generator for worker `index`, derived as seed XOR index."""
        return Rng(self.seed ^ (int(index) & _MASK64))

    # -- draws ------------------------------------------------------------

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)
