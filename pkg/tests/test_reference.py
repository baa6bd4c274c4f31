import math

import numpy as np
import pytest

from adacluster.errors import DimensionError, ParameterError
from adacluster.reference import compare_outputs, exact_topk_keys, full_attention


def attention_oracle(q, k, v):
    """Scalar-loop softmax attention."""
    lq, d = q.shape
    lk = k.shape[0]
    out = np.zeros((lq, v.shape[1]))
    for i in range(lq):
        logits = np.array([sum(float(q[i, t]) * float(k[j, t]) for t in range(d)) / math.sqrt(d)
                           for j in range(lk)])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        for j in range(lk):
            out[i] += w[j] * v[j]
    return out


class TestFullAttention:
    def test_single_key(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(5, 4)).astype(np.float32)
        k = rng.normal(size=(1, 4)).astype(np.float32)
        v = rng.normal(size=(1, 4)).astype(np.float32)
        out = full_attention(q, k, v)
        for row in out:
            np.testing.assert_allclose(row, v[0], atol=1e-6)

    def test_identical_keys_average_values(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(3, 4)).astype(np.float32)
        k = np.tile(rng.normal(size=(1, 4)).astype(np.float32), (6, 1))
        v = rng.normal(size=(6, 4)).astype(np.float32)
        out = full_attention(q, k, v)
        for row in out:
            np.testing.assert_allclose(row, v.mean(axis=0), atol=1e-5)

    def test_against_scalar_oracle(self):
        rng = np.random.default_rng(2)
        q = rng.normal(size=(8, 4)).astype(np.float32)
        k = rng.normal(size=(8, 4)).astype(np.float32)
        v = rng.normal(size=(8, 4)).astype(np.float32)
        np.testing.assert_allclose(full_attention(q, k, v), attention_oracle(q, k, v), atol=1e-5)

    def test_output_is_convex_combination(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(16, 6)).astype(np.float32)
        k = rng.normal(size=(12, 6)).astype(np.float32)
        v = rng.normal(size=(12, 6)).astype(np.float32)
        out = full_attention(q, k, v)
        assert np.all(out >= v.min(axis=0) - 1e-5)
        assert np.all(out <= v.max(axis=0) + 1e-5)

    def test_blocking_does_not_change_result(self):
        rng = np.random.default_rng(4)
        q = rng.normal(size=(10, 4)).astype(np.float32)
        k = rng.normal(size=(7, 4)).astype(np.float32)
        v = rng.normal(size=(7, 4)).astype(np.float32)
        np.testing.assert_array_equal(full_attention(q, k, v, block=3),
                                      full_attention(q, k, v, block=1024))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            full_attention(np.zeros((2, 3), np.float32),
                           np.zeros((4, 5), np.float32),
                           np.zeros((4, 5), np.float32))


class TestExactTopkKeys:
    def test_basis_alignment(self):
        k = np.eye(4, dtype=np.float32)
        q = np.array([1, 0, 0, 0], np.float32)
        assert exact_topk_keys(q, k, 1)[0] == 0

    def test_all_keys_is_score_sorted_permutation(self):
        rng = np.random.default_rng(5)
        q = rng.normal(size=6).astype(np.float32)
        k = rng.normal(size=(9, 6)).astype(np.float32)
        idx = exact_topk_keys(q, k, 9)
        assert sorted(idx) == list(range(9))
        scores = k @ q
        assert np.all(np.diff(scores[idx]) <= 0)

    def test_matches_full_sort(self):
        rng = np.random.default_rng(6)
        q = rng.normal(size=8).astype(np.float32)
        k = rng.normal(size=(32, 8)).astype(np.float32)
        got = exact_topk_keys(q, k, 10)
        want = np.argsort(-(k @ q), kind="stable")[:10]
        np.testing.assert_array_equal(got, want)

    def test_tie_break_lower_index(self):
        k = np.array([[1.0], [1.0], [0.5]], np.float32)
        np.testing.assert_array_equal(exact_topk_keys(np.array([1.0], np.float32), k, 2), [0, 1])

    def test_kk_out_of_range(self):
        k = np.zeros((3, 2), np.float32)
        q = np.zeros(2, np.float32)
        with pytest.raises(ParameterError):
            exact_topk_keys(q, k, 0)
        with pytest.raises(ParameterError):
            exact_topk_keys(q, k, 4)


class TestCompareOutputs:
    def test_identity(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 5)).astype(np.float32)
        m = compare_outputs(a, a)
        assert m.rel_l2 == 0.0
        assert m.cosine_sim == pytest.approx(1.0)
        assert math.isinf(m.snr_db)
        assert m.max_abs == 0.0

    def test_zero_output(self):
        rng = np.random.default_rng(8)
        a = rng.normal(size=(4, 4)).astype(np.float32)
        m = compare_outputs(a, np.zeros_like(a))
        assert m.rel_l2 == pytest.approx(1.0)

    def test_snr_of_unit_noise(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(64, 32)).astype(np.float32)
        eps = 1e-3
        noise = rng.normal(size=a.shape)
        noise /= np.abs(noise)  # +/- 1 entries
        m = compare_outputs(a, a + (eps * noise).astype(np.float32))
        expected = 20 * math.log10(np.linalg.norm(a) / (eps * math.sqrt(a.size)))
        assert abs(m.snr_db - expected) <= 0.5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            compare_outputs(np.zeros((2, 2), np.float32), np.zeros((2, 3), np.float32))
