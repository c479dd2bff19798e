"""
Seed-derived random streams. Every consumer names its purpose so streams never overlap.
"""

import zlib

import numpy as np


def _purposeKey(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def generator(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """
    Independent PCG64 stream for (seed, purpose, indices).

    Args:
        seed: Pipeline seed
        purpose: Consumer name, e.g. "init.teacher" or "data.train"
        indices: Optional extra keys such as an image index

    Returns:
        np.random.Generator: Deterministic generator
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purposeKey(purpose),) + tuple(int(i) for i in indices))
    return np.random.Generator(np.random.PCG64(sequence))


def subSeed(seed: int, purpose: str, index: int) -> int:
    """64-bit sub-seed recorded in manifests for per-index reproduction"""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(_purposeKey(purpose), int(index)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
