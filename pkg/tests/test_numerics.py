import numpy as np
import pytest

from blockprune.errors import NonFiniteError, ShapeError
from blockprune.numerics import (
    COLUMN,
    ROW,
    as_matrix,
    child_rngs,
    finite_diff_gradient,
    make_rng,
    matmul,
    segment_l2_norm,
)


def naive_matmul(a, b):
    """Triple loop with the k index innermost and ascending."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_matches_naive_loop_bitwise(self):
        rng = np.random.default_rng(11)
        for m, k, n in [(3, 4, 5), (7, 7, 1), (1, 9, 6), (8, 16, 8)]:
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    def test_noncontiguous_inputs(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 10))[:, ::2]
        b = rng.normal(size=(5, 8))
        assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError, match="incompatible"):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_not_two_dimensional(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros(3), np.zeros((3, 2)))


class TestAsMatrix:
    def test_promotes_to_float64(self):
        m = as_matrix([[1, 2], [3, 4]])
        assert m.dtype == np.float64
        assert m.shape == (2, 2)

    def test_rejects_vector(self):
        with pytest.raises(ShapeError):
            as_matrix(np.arange(4))


class TestSegmentNorm:
    def test_row_segment_matches_direct_norm(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(6, 12))
        got = segment_l2_norm(w, 2, ROW, 4, 8)
        np.testing.assert_allclose(got, np.linalg.norm(w[2, 4:8]), rtol=0, atol=0)

    def test_column_segment_matches_direct_norm(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(10, 4))
        got = segment_l2_norm(w, 1, COLUMN, 5, 10)
        np.testing.assert_allclose(got, np.linalg.norm(w[5:10, 1]), rtol=1e-15)

    def test_range_validation(self):
        w = np.zeros((4, 4))
        with pytest.raises(ShapeError):
            segment_l2_norm(w, 0, ROW, 3, 3)
        with pytest.raises(ShapeError):
            segment_l2_norm(w, 0, ROW, 0, 5)
        with pytest.raises(ShapeError):
            segment_l2_norm(w, 4, ROW, 0, 2)

    def test_unknown_axis(self):
        with pytest.raises(ShapeError, match="axis"):
            segment_l2_norm(np.zeros((4, 4)), 0, "diag", 0, 2)


class TestFiniteDiff:
    def test_quadratic_gradient(self):
        # f(w) = sum(c * w^2) has gradient 2*c*w
        rng = np.random.default_rng(7)
        c = rng.uniform(0.5, 2.0, size=(3, 4))
        w = rng.normal(size=(3, 4))
        g = finite_diff_gradient(lambda x: float((c * x * x).sum()), w, 1e-6)
        np.testing.assert_allclose(g, 2 * c * w, rtol=1e-6, atol=1e-8)

    def test_vector_argument(self):
        w = np.array([1.0, -2.0, 0.5])
        g = finite_diff_gradient(lambda x: float(np.sum(x**3)), w, 1e-6)
        np.testing.assert_allclose(g, 3 * w**2, rtol=1e-5, atol=1e-7)

    def test_restores_the_buffer(self):
        w = np.arange(6.0).reshape(2, 3)
        before = w.copy()
        finite_diff_gradient(lambda x: float(x.sum()), w, 1e-5)
        assert np.array_equal(w, before)

    def test_nonfinite_value_names_the_entry(self):
        def f(x):
            return float("nan") if x[1, 0] > 0.5 else float(x.sum())

        with pytest.raises(NonFiniteError, match=r"\(1, 0\)"):
            finite_diff_gradient(f, np.zeros((2, 2)), 1.0)


class TestRngs:
    def test_same_seed_same_stream(self):
        a = make_rng(123).normal(size=8)
        b = make_rng(123).normal(size=8)
        assert np.array_equal(a, b)

    def test_children_are_distinct_and_reproducible(self):
        first = [r.normal(size=4) for r in child_rngs(9, 3)]
        again = [r.normal(size=4) for r in child_rngs(9, 3)]
        for x, y in zip(first, again):
            assert np.array_equal(x, y)
        assert not np.array_equal(first[0], first[1])
        assert not np.array_equal(first[1], first[2])
