import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from terrain_shadow.heightfield import HeightField, sample_height
from terrain_shadow.maxmip import build_max_mipmap, fetch_max, level_as_field, sample_max


def window_max(base, m, i, j):
    k = 2**m
    return base[j * k : (j + 1) * k, i * k : (i + 1) * k].max()


def test_constant_field_all_levels():
    pyr = build_max_mipmap(HeightField(np.full((16, 16), 0.3)))
    assert pyr.num_levels == 5
    assert all(np.all(lv == 0.3) for lv in pyr.levels)


def test_two_by_two():
    pyr = build_max_mipmap(np.array([[0.1, 0.2], [0.5, 0.4]]))
    assert pyr.levels[1].shape == (1, 1) and pyr.levels[1][0, 0] == 0.5


def test_random_8x8_window_oracle(rng):
    base = rng.random((8, 8))
    pyr = build_max_mipmap(base)
    for m, lv in enumerate(pyr.levels):
        assert lv.shape == (8 >> m, 8 >> m)
        for j in range(lv.shape[0]):
            for i in range(lv.shape[1]):
                assert lv[j, i] == window_max(base, m, i, j)


def test_delta_m_and_light_radius():
    hf = HeightField(np.zeros((64, 64)), 30.0, 8000.0, 0, 1737.4e3)
    pyr = build_max_mipmap(hf)
    assert pyr.delta_M(0) == 1 / 64 and pyr.delta_M(6) == 1.0
    assert pyr.light_radius(0.01) == pytest.approx(np.tan(0.01) * 30.0 * 64 / 8000.0)


def test_sample_max_examples(rng):
    base = rng.random((16, 16))
    pyr = build_max_mipmap(base)
    top = pyr.num_levels - 1
    for t in rng.random((10, 2)):
        assert sample_max(pyr, t, top) == base.max()
    assert sample_max(pyr, ((3 + 0.5) / 16, (7 + 0.5) / 16), 0) == base[7, 3]
    with pytest.raises(IndexError):
        sample_max(pyr, (0.5, 0.5), pyr.num_levels)
    with pytest.raises(IndexError):
        sample_max(pyr, (0.5, 0.5), -1)


def test_sample_max_conservative_random_queries(rng):
    hf = HeightField(rng.random((32, 32)))
    pyr = build_max_mipmap(hf)
    for _ in range(100):
        t = rng.random(2)
        m = int(rng.integers(0, pyr.num_levels))
        k = 2**m
        i, j = (np.minimum((t * (32 >> m)).astype(int), (32 >> m) - 1))
        smax = sample_max(pyr, t, m)
        for jj in range(j * k, (j + 1) * k):
            for ii in range(i * k, (i + 1) * k):
                assert smax >= sample_height(hf, ((ii + 0.5) / 32, (jj + 0.5) / 32), "point")


@given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 1))
def test_monotone_across_levels(seed, u, v):
    pyr = build_max_mipmap(np.random.default_rng(seed).random((16, 16)))
    vals = [sample_max(pyr, (u, v), m) for m in range(pyr.num_levels)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_packed_fetch_matches_levels(rng):
    pyr = build_max_mipmap(rng.random((32, 32)))
    for m, lv in enumerate(pyr.levels):
        n = lv.shape[0]
        for j in range(n):
            for i in range(n):
                assert fetch_max(pyr.packed, pyr.offsets, 32, m, i, j) == lv[j, i]
        # out-of-range indices clamp to the edge
        assert fetch_max(pyr.packed, pyr.offsets, 32, m, -1, n) == lv[n - 1, 0]


def test_level_as_field_scales():
    hf = HeightField(np.zeros((16, 16)), 10.0, 500.0, 3, 1e4)
    f = level_as_field(build_max_mipmap(hf), 2, like=hf)
    assert f.N == 4 and f.horizontal_scale == 40.0 and f.face_id == 3


def test_pyramid_is_read_only(rng):
    pyr = build_max_mipmap(rng.random((8, 8)))
    with pytest.raises(ValueError):
        pyr.levels[1][0, 0] = 2.0
