import numpy as np
import pytest

from nngp_gauge import rng

# First outputs of the reference SplitMix64 generator seeded with 0
# (state advances by the golden gamma before each finalization).
SPLITMIX_SEED0 = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_golden_mix_matches_reference_splitmix_stream():
    assert [rng.golden_mix(k) for k in range(3)] == SPLITMIX_SEED0


def test_split_is_xor_of_base_and_mixed_index():
    base = 0x0123456789ABCDEF
    assert rng.split(base, 1) == base ^ SPLITMIX_SEED0[1]
    assert rng.split(0, 2) == SPLITMIX_SEED0[2]


def test_split_rejects_negative_index():
    with pytest.raises(ValueError):
        rng.split(3, -1)


def test_children_are_distinct_and_deterministic():
    seeds = [rng.split(42, k) for k in range(5000)]
    assert len(set(seeds)) == len(seeds)
    a = rng.replica_generator(42, 17).standard_normal(8)
    b = rng.replica_generator(42, 17).standard_normal(8)
    np.testing.assert_array_equal(a, b)


def test_sibling_streams_are_uncorrelated():
    x = np.stack([rng.replica_generator(7, k).standard_normal(4000) for k in range(8)])
    c = np.corrcoef(x)
    off = c[~np.eye(8, dtype=bool)]
    # 8 / sqrt(4000) is about 4 standard deviations for a null correlation
    assert np.max(np.abs(off)) < 4 / np.sqrt(4000)
