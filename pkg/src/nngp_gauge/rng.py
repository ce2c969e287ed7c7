"""Seed splitting on top of numpy's counter-based Philox generator.

Every replica gets its own stream keyed by ``split(base, k)``, so results
depend only on the replica index and never on scheduling.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Recorded in every report so runs can be reproduced elsewhere.
MIXER_ID = "xor-splitmix64(golden*(k+1))/philox4x64"


def splitmix64(x: int) -> int:
    """Finalizer of the SplitMix64 generator (a bijection on 64-bit words)."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def golden_mix(k: int) -> int:
    return splitmix64((GOLDEN * (k + 1)) & MASK64)


def split(base: int, k: int) -> int:
    """Seed of the ``k``-th child stream of ``base``."""
    if k < 0:
        raise ValueError(f"replica index must be >= 0, got {k}")
    return (base & MASK64) ^ golden_mix(k)


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed & MASK64))


def replica_generator(base: int, k: int) -> np.random.Generator:
    return generator(split(base, k))
