"""Substrate checks: dot/outer against naive loops, spectra, seeded sampling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lola.numerics import (
    SeededRng,
    dot,
    gaussian_sample,
    outer_accumulate,
    singular_values,
)


def test_dot_orthogonal():
    assert dot([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_dot_known_value():
    assert dot([2.0, 3.0], [2.0, 3.0]) == 13.0


def test_dot_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        dot([1.0, 2.0], [1.0, 2.0, 3.0])


def test_dot_rejects_non_finite():
    with pytest.raises(ValueError):
        dot([1.0, np.nan], [1.0, 2.0])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_dot_matches_summation_loop(seed):
    gen = SeededRng(seed).generator()
    a = gen.normal(size=8)
    b = gen.normal(size=8)
    expected = sum(float(a[i]) * float(b[i]) for i in range(8))
    assert dot(a, b) == pytest.approx(expected, rel=1e-12)


def test_outer_accumulate_forced():
    out = outer_accumulate(np.zeros((2, 1)), [1.0, 0.0], [2.0])
    assert out.tolist() == [[2.0], [0.0]]


def test_outer_accumulate_zero_vector_is_identity():
    gen = SeededRng(5).generator()
    m = gen.normal(size=(3, 4))
    out = outer_accumulate(m, np.zeros(3), gen.normal(size=4))
    np.testing.assert_array_equal(out, m)


def test_outer_accumulate_does_not_mutate():
    m = np.ones((2, 2))
    outer_accumulate(m, [1.0, 1.0], [1.0, 1.0])
    np.testing.assert_array_equal(m, np.ones((2, 2)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_outer_accumulate_matches_entrywise_loop(seed):
    gen = SeededRng(seed).generator()
    m = gen.normal(size=(3, 5))
    a = gen.normal(size=3)
    b = gen.normal(size=5)
    got = outer_accumulate(m, a, b)
    for i in range(3):
        for j in range(5):
            assert got[i, j] == pytest.approx(m[i, j] + a[i] * b[j], rel=1e-12, abs=1e-15)


def test_singular_values_identity():
    np.testing.assert_allclose(singular_values(np.eye(3)), [1.0, 1.0, 1.0])


def test_singular_values_diagonal_sorted():
    np.testing.assert_allclose(singular_values(np.diag([2.0, 3.0, 1.0])), [3.0, 2.0, 1.0])


def test_singular_values_shifted_identity_plus_ones():
    # (e-1) I + J over n=4 orthonormal inputs: rank-one bump e-1+n, rest e-1
    n = 4
    g = (math.e - 1.0) * np.eye(n) + np.ones((n, n))
    sv = singular_values(g)
    expected = [math.e - 1.0 + n] + [math.e - 1.0] * (n - 1)
    np.testing.assert_allclose(sv, expected, rtol=1e-12)


def test_singular_values_count_and_order():
    gen = SeededRng(11).generator()
    g = gen.normal(size=(6, 4))
    sv = singular_values(g)
    assert sv.shape == (4,)
    assert np.all(np.diff(sv) <= 0)
    assert np.all(sv >= 0)


def test_singular_values_frobenius_identity_random_64():
    gen = SeededRng(12).generator()
    for _ in range(10):
        g = gen.normal(size=(64, 64))
        sv = singular_values(g)
        assert (sv**2).sum() == pytest.approx((g**2).sum(), rel=1e-8)


def test_dot_and_outer_match_naive_loops_bulk():
    # 1000 random cases against plain Python accumulation
    gen = SeededRng(40).generator()
    for _ in range(1000):
        d1, d2 = int(gen.integers(1, 7)), int(gen.integers(1, 7))
        a = gen.normal(size=d1)
        b = gen.normal(size=d1)
        expected = 0.0
        for i in range(d1):
            expected += float(a[i]) * float(b[i])
        assert dot(a, b) == pytest.approx(expected, rel=1e-12, abs=1e-15)

        m = gen.normal(size=(d1, d2))
        u, w = gen.normal(size=d1), gen.normal(size=d2)
        got = outer_accumulate(m, u, w)
        for i in range(d1):
            for j in range(d2):
                assert got[i, j] == pytest.approx(m[i, j] + u[i] * w[j], rel=1e-12, abs=1e-15)


def test_singular_values_rejects_non_finite():
    bad = np.ones((2, 2))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        singular_values(bad)


def test_gaussian_sample_deterministic():
    rng = SeededRng(7)
    a = gaussian_sample(rng, 2, 3, 1.0)
    b = gaussian_sample(rng, 2, 3, 1.0)
    np.testing.assert_array_equal(a, b)


def test_gaussian_sample_law_of_large_numbers():
    xs = gaussian_sample(SeededRng(3), 100_000, 1, 1.0)
    assert abs(xs.mean()) < 0.02


def test_gaussian_sample_scale_is_std():
    xs = gaussian_sample(SeededRng(4), 200_000, 1, 0.5)
    assert xs.std() == pytest.approx(0.5, rel=0.02)


@pytest.mark.parametrize("n,d,scale", [(0, 3, 1.0), (2, 0, 1.0), (2, 3, 0.0), (2, 3, -1.0)])
def test_gaussian_sample_rejects_bad_arguments(n, d, scale):
    with pytest.raises(ValueError):
        gaussian_sample(SeededRng(0), n, d, scale)


def test_child_streams_are_independent_and_stable():
    rng = SeededRng(42)
    c1 = rng.child(0)
    c2 = rng.child(1)
    assert c1.seed != c2.seed
    assert rng.child(0).seed == c1.seed
    a = gaussian_sample(c1, 4, 2, 1.0)
    b = gaussian_sample(c2, 4, 2, 1.0)
    assert not np.allclose(a, b)
