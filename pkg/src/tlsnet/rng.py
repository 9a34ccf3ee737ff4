"""Seed derivation.

Every random stream in the package is a numpy ``Generator`` backed by PCG64
(O'Neill 2014), seeded through ``numpy.random.SeedSequence`` with the entropy
list ``[master_seed, purpose, *indices]``. The purpose codes below are part of
the on-disk contract: changing one changes every dataset and checkpoint
derived from it.
"""

from __future__ import annotations

import numpy as np

DATASET_WINDOWS = 1
DATASET_SPLIT = 2
INIT = 3
SHUFFLE = 4
ENVELOPE = 5
GRID_ENVELOPE = 6
GRADCHECK = 7

_MASK64 = (1 << 64) - 1


def derive(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Generator for ``(seed, purpose, *indices)``; independent of call order."""
    entropy = [int(seed) & _MASK64, int(purpose), *(int(i) for i in indices)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, purpose: int, *indices: int) -> int:
    """A 64-bit child seed, for places that store a seed rather than a stream."""
    return int(derive(seed, purpose, *indices).integers(0, 1 << 63))
