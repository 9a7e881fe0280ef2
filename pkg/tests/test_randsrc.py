import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kaczmarz_pr.randsrc import (
    InvalidDimensionError,
    SeededStream,
    as_generator,
    sample_gaussian,
    sample_sphere_vector,
    sample_uv_marginal,
    streams_for_runs,
)


def ks_two_sample(x, y):
    x, y = np.sort(x), np.sort(y)
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / x.size
    fy = np.searchsorted(y, pts, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))


def normal_cdf(x):
    return 0.5 * (1.0 + np.frompyfunc(math.erf, 1, 1)(x / math.sqrt(2.0)).astype(float))


def test_sphere_d1_is_plus_minus_one():
    a = sample_sphere_vector(1, SeededStream(5), size=4000)
    assert set(np.unique(a)) == {-1.0, 1.0}
    frac = np.mean(a > 0)
    assert abs(frac - 0.5) < 4 * 0.5 / math.sqrt(4000)


def test_sphere_norm_exact():
    a = sample_sphere_vector(16, SeededStream(1))
    assert abs(a @ a - 16) <= 1e-9 * 16


@given(d=st.integers(1, 300), seed=st.integers(0, 2**64 - 1), idx=st.integers(0, 2**64 - 1))
@settings(max_examples=50, deadline=None)
def test_sphere_norm_property(d, seed, idx):
    a = sample_sphere_vector(d, SeededStream(seed, idx), size=3)
    np.testing.assert_allclose(np.sum(a * a, axis=-1), d, rtol=1e-9)


@pytest.mark.slow
def test_sphere_second_moment():
    rng = SeededStream(2).generator()
    a1 = np.concatenate([sample_sphere_vector(1000, rng, size=20_000)[:, 0].copy() for _ in range(50)])
    sq = a1**2
    se = sq.std(ddof=1) / math.sqrt(sq.size)
    assert abs(sq.mean() - 1.0) <= 4 * se


def test_invalid_dimensions():
    with pytest.raises(InvalidDimensionError):
        sample_sphere_vector(0, SeededStream())
    for d in (0, 1, 2):
        with pytest.raises(InvalidDimensionError):
            sample_uv_marginal(d, SeededStream())


def test_uv_inside_disc():
    for d in (3, 4, 10, 1000):
        u, v = sample_uv_marginal(d, SeededStream(d), size=10_000)
        assert np.all(u * u + v * v <= d * (1 + 1e-12))


def test_uv_moments_d1000():
    u, v = sample_uv_marginal(1000, SeededStream(3), size=1_000_000)
    uu, uv = u * u, u * v
    assert abs(uu.mean() - 1) <= 4 * uu.std(ddof=1) / 1000
    assert abs(uv.mean()) <= 4 * uv.std(ddof=1) / 1000


def test_uv_near_gaussian_large_d():
    u, _ = sample_uv_marginal(100_000, SeededStream(4), size=1_000_000)
    u = np.sort(u)
    n = u.size
    cdf = normal_cdf(u)
    dist = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    assert dist < 0.01


def test_marginal_matches_full_vector():
    d, n = 12, 100_000
    full = sample_sphere_vector(d, SeededStream(6), size=n)
    u, v = sample_uv_marginal(d, SeededStream(7), size=n)
    crit = math.sqrt(-math.log(0.001 / 2) / 2) * math.sqrt(2.0 / n)
    assert ks_two_sample(full[:, 0], u) < crit
    assert ks_two_sample(full[:, 1], v) < crit


def test_gaussian_moments_and_determinism():
    g = sample_gaussian(SeededStream(8), size=1_000_000)
    assert abs(g.mean()) <= 4 / 1000
    assert abs(g.var() - 1) <= 0.01
    np.testing.assert_array_equal(g, sample_gaussian(SeededStream(8), size=1_000_000))


def test_reproducible_and_distinct_streams():
    a = sample_uv_marginal(50, SeededStream(9, 3), size=100)
    b = sample_uv_marginal(50, SeededStream(9, 3), size=100)
    c = sample_uv_marginal(50, SeededStream(9, 4), size=100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a[0], c[0])


def test_independent_streams_uncorrelated():
    x = sample_gaussian(SeededStream(10, 0), size=200_000)
    y = sample_gaussian(SeededStream(10, 1), size=200_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(200_000)


def test_chunking_does_not_change_draws():
    whole = sample_gaussian(SeededStream(11), size=1000)
    rng = SeededStream(11).generator()
    parts = np.concatenate([sample_gaussian(rng, size=k) for k in (1, 99, 400, 500)])
    np.testing.assert_array_equal(whole, parts)


def test_child_streams_and_helpers():
    s = SeededStream(1, 2)
    assert s.child(0) != s.child(1)
    assert s.child(0) == SeededStream(1, 2).child(0)
    assert [t.stream_index for t in streams_for_runs(3, 3, offset=5)] == [5, 6, 7]
    g = np.random.default_rng(0)
    assert as_generator(g) is g
    with pytest.raises(TypeError):
        as_generator(3)
    with pytest.raises(ValueError):
        SeededStream(-1)
    with pytest.raises(ValueError):
        SeededStream(0, 2**64)
