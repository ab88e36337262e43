import numpy as np
import pytest
from scipy import stats

from spde_uniq.rng import NoiseStream, gaussian_pairs, philox4x32

# Random123 known-answer vectors for Philox4x32-10
KAT = [
    ([0, 0, 0, 0], [0, 0], [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]),
    ([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2, [0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD]),
    ([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0],
     [0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1]),
]


@pytest.mark.parametrize("ctr,key,expected", KAT)
def test_philox_known_answers(ctr, key, expected):
    out = philox4x32(np.array(ctr, dtype=np.uint64), np.array(key, dtype=np.uint64))
    assert [int(v) for v in out] == expected


def test_batched_equals_scalar():
    ctrs = np.array([k[0] for k in KAT], dtype=np.uint32)
    keys = np.array([k[1] for k in KAT], dtype=np.uint32)
    out = philox4x32(ctrs, keys)
    assert [[int(v) for v in row] for row in out] == [k[2] for k in KAT]


def test_draws_are_addressed_not_sequential():
    a = gaussian_pairs(7, np.arange(5)[:, None], np.arange(3)[None, :], 11)
    b = gaussian_pairs(7, 3, 2, 11)
    assert np.array_equal(a[3, 2], b)
    s = NoiseStream(7, 10)
    full = s.normals(4, np.arange(1, 6), np.arange(100))
    part = s.normals(4, np.arange(1, 6), np.arange(40, 60))
    assert np.array_equal(full[40:60], part)


def test_seed_changes_stream():
    assert not np.array_equal(gaussian_pairs(1, 0, 0, np.arange(10)),
                              gaussian_pairs(2, 0, 0, np.arange(10)))


def test_large_trajectory_index_uses_high_word():
    lo = gaussian_pairs(3, 0, 0, 5)
    hi = gaussian_pairs(3, 0, 0, 5 + (1 << 32))
    assert not np.array_equal(lo, hi)


def test_gaussian_moments_and_normality():
    z = gaussian_pairs(2024, np.arange(200)[:, None], np.arange(100)[None, :], 0).ravel()
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_pair_components_uncorrelated():
    z = gaussian_pairs(9, np.arange(20000), 1, 0)
    r = np.corrcoef(z[:, 0], z[:, 1])[0, 1]
    assert abs(r) < 4 / np.sqrt(20000)


def test_nesting_ratio():
    s = NoiseStream(1, 12)
    assert s.ratio(4) == 3
    with pytest.raises(ValueError):
        s.ratio(5)
    with pytest.raises(ValueError):
        NoiseStream(1, 0)
