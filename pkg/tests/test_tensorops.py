import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adacluster.errors import DimensionError
from adacluster.tensorops import l2_normalize_rows, matmul, row_softmax


def matmul_oracle(a, b):
    """Scalar triple-loop reference."""
    m, p = a.shape
    p2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(p):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        eye = np.eye(2, dtype=np.float32)
        np.testing.assert_array_equal(matmul(eye, eye), eye)

    def test_hand_case(self):
        a = np.array([[1, 2], [3, 4]], dtype=np.float32)
        b = np.array([[0], [1]], dtype=np.float32)
        np.testing.assert_array_equal(matmul(a, b), [[2], [4]])

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(7, 5)).astype(np.float32)
        b = rng.normal(size=(5, 3)).astype(np.float32)
        got = matmul(a, b)
        want = matmul_oracle(a, b)
        assert np.abs(got - want).max() <= 1e-6 * (1 + np.abs(want).max())

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.zeros((2, 3), np.float32), np.zeros((2, 3), np.float32))

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_matches_oracle_property(self, m, p, n, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(m, p)).astype(np.float32)
        b = rng.normal(size=(p, n)).astype(np.float32)
        want = matmul_oracle(a, b)
        assert np.abs(matmul(a, b) - want).max() <= 1e-6 * (1 + np.abs(want).max())


class TestRowSoftmax:
    def test_uniform_row(self):
        out = row_softmax(np.zeros((1, 3), np.float32), 1.0)
        np.testing.assert_allclose(out, np.full((1, 3), 1 / 3), atol=1e-7)

    def test_large_values_stable(self):
        out = row_softmax(np.array([[1000.0, 0.0]], np.float32), 1.0)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)

    def test_random_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        out = row_softmax(rng.normal(size=(4, 6)).astype(np.float32), 0.7)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)

    @given(st.integers(0, 10**6))
    @settings(max_examples=30, deadline=None)
    def test_rows_are_distributions(self, seed):
        rng = np.random.default_rng(seed)
        s = (rng.normal(size=(3, 5)) * rng.uniform(0, 50)).astype(np.float32)
        out = row_softmax(s, 1.0)
        assert np.all(out >= 0) and np.all(out <= 1)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


class TestL2NormalizeRows:
    def test_three_four_five(self):
        out = l2_normalize_rows(np.array([[3.0, 4.0]], np.float32))
        np.testing.assert_allclose(out.rows, [[0.6, 0.8]], atol=1e-7)
        assert out.degenerate.size == 0

    def test_unit_row_unchanged(self):
        x = np.array([[0.0, 1.0], [1.0, 0.0]], np.float32)
        np.testing.assert_array_equal(l2_normalize_rows(x).rows, x)

    def test_idempotent_bit_exact(self):
        rng = np.random.default_rng(2)
        x = (rng.normal(size=(50, 17)) * rng.lognormal(0, 2, size=(50, 1))).astype(np.float32)
        once = l2_normalize_rows(x).rows
        twice = l2_normalize_rows(once).rows
        np.testing.assert_array_equal(once, twice)

    def test_degenerate_row_flagged_as_zeros(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0]], np.float32)
        out = l2_normalize_rows(x)
        np.testing.assert_array_equal(out.degenerate, [0])
        np.testing.assert_array_equal(out.rows[0], [0.0, 0.0])

    def test_score_order_preserved(self):
        # Ranking of q.k over keys is invariant to normalizing q.
        rng = np.random.default_rng(3)
        for _ in range(50):
            q = rng.normal(size=8).astype(np.float32) * rng.lognormal(0, 2)
            k = rng.normal(size=(32, 8)).astype(np.float32)
            qn = l2_normalize_rows(q[None, :]).rows[0]
            raw = np.argsort(-(k @ q), kind="stable")
            nrm = np.argsort(-(k @ qn), kind="stable")
            np.testing.assert_array_equal(raw, nrm)
