"""Delete-a-group jackknife over additive sufficient statistics."""

import numpy as np

DEFAULT_GROUPS = 64


def group_sums(values, groups=DEFAULT_GROUPS):
    """Sum ``values`` (shape ``(S, ...)``) over ``groups`` contiguous blocks."""
    values = np.asarray(values, dtype=float)
    g = max(2, min(groups, len(values)))
    edges = np.linspace(0, len(values), g + 1).astype(int)
    return np.add.reduceat(values, edges[:-1], axis=0)


def jackknife(block_stats, fn):
    """Estimate ``fn(total)`` and its delete-a-group standard error.

    ``block_stats`` has one row of additive statistics per group; ``fn``
    maps a summed row to a scalar.
    """
    block_stats = np.asarray(block_stats, dtype=float)
    total = block_stats.sum(axis=0)
    est = float(fn(total))
    g = len(block_stats)
    loo = np.array([fn(total - b) for b in block_stats], dtype=float)
    se = float(np.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2)))
    return est, se
