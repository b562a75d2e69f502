"""Splittable, counter-based random streams.

Every random draw in episodica comes from a generator addressed by a key
path such as ``(seed, epoch, batch, image, transform)``. Two draws with the
same path produce the same numbers no matter which thread asks first.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

# transform ids used in key paths
CROP = 0
DISTORT = 1
BLUR = 2
SHUFFLE = 3


@dataclass(frozen=True)
class RngKey:
    seed: int
    path: Tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngKey":
        return RngKey(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(sequence))


def stream(seed: int, *path: int) -> np.random.Generator:
    return RngKey(seed).child(*path).generator()
