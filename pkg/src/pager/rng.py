"""Deterministic random-stream splitting.

Every image generated or enhanced gets its own ``numpy.random.Generator``.
The child seed is a pure function of ``(root_seed, stage_id, index)``::

    h = splitmix64(root_seed)
    h = splitmix64(h ^ stage_id)
    h = splitmix64(h ^ index)

where ``splitmix64`` is the finalizer of Steele et al.'s SplitMix64
generator (constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9,
0x94D049BB133111EB).  The child generator is ``PCG64(h)``.  Because the seed
never depends on batch size or scheduling, serial and parallel runs draw the
same numbers for the same image.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# stage ids used by the pipeline
STAGE_CORE = 1
STAGE_CLASS = 2
STAGE_ENHANCE = 16  # + stage index
STAGE_TRAIN_ENHANCE = 64  # + stage index


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def hash64(root_seed: int, stage_id: int, index: int) -> int:
    h = splitmix64(int(root_seed) & _MASK)
    h = splitmix64(h ^ (int(stage_id) & _MASK))
    return splitmix64(h ^ (int(index) & _MASK))


def child_rng(root_seed: int, stage_id: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(hash64(root_seed, stage_id, index)))


def child_rngs(root_seed: int, stage_id: int, count: int, start: int = 0) -> list[np.random.Generator]:
    return [child_rng(root_seed, stage_id, i) for i in range(start, start + count)]
