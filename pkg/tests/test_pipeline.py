import numpy as np
import pytest

from adacluster.errors import ContractError, ParameterError
from adacluster.pipeline import (
    LayerPolicy,
    PipelineParams,
    StepState,
    adacluster_attention,
    count_flops,
    run_denoise_steps,
)
from adacluster.reference import compare_outputs, exact_topk_keys, full_attention
from adacluster.harness.config import LayerSpec
from adacluster.harness.synthetic import gen_synthetic


def head_inputs(seed, L=512, D=16, g=16, sigma=0.3, sep=20.0):
    spec = LayerSpec(kind="compact", gaussian_components=g, component_sigma=sigma,
                     component_separation=sep, scale_spread=0.2)
    return gen_synthetic(spec, L, D, 1, 1, seed)[0][0]


class TestCountFlops:
    def test_density_one_matches_full(self):
        fc = count_flops(128, 16, 8, 4, density=1.0, kmeans_iters=0, mode="sparse")
        assert fc.flops_sparse == fc.flops_full

    def test_quarter_density(self):
        fc = count_flops(128, 16, 8, 4, density=0.25, kmeans_iters=0, mode="sparse")
        assert fc.flops_sparse == fc.flops_full / 4

    def test_closed_form(self):
        L, D, C, Gq, it = 100, 8, 10, 5, 7
        fc = count_flops(L, D, C, Gq, density=0.5, kmeans_iters=it, mode="sparse")
        assert fc.flops_full == 4 * L * L * D
        assert fc.flops_sparse == 4 * L * 0.5 * L * D
        assert fc.flops_overhead == 2 * L * C * D * it + L * D + 4 * Gq * C * D
        assert fc.est_speedup == fc.flops_full / (fc.flops_sparse + fc.flops_overhead)

    def test_full_mode(self):
        fc = count_flops(64, 8, 4, 2, density=0.1, kmeans_iters=0, mode="full")
        assert fc.flops_sparse == fc.flops_full
        assert fc.flops_overhead == 0

    def test_positive_arguments_required(self):
        with pytest.raises(ParameterError):
            count_flops(0, 8, 4, 2, 0.5, 0, "sparse")


class TestAdaclusterAttention:
    def test_topk_covering_everything_is_exact(self):
        q, k, v = head_inputs(0)
        params = PipelineParams(q_clusters=16, topk=10**6, m0=32, n_max=1000)
        policy = LayerPolicy(topk=10**6, q_clusters=16)
        out, stats = adacluster_attention(q, k, v, policy, StepState(), seed=0, params=params)
        assert stats.mode == "sparse"
        assert stats.density == 1.0
        m = compare_outputs(full_attention(q, k, v), out)
        assert m.rel_l2 <= 1e-5

    def test_dispersed_fallback_bit_equals_full(self):
        rng = np.random.default_rng(1)
        k = rng.standard_t(2, size=(256, 8)).astype(np.float32)
        q = rng.normal(size=(256, 8)).astype(np.float32)
        v = rng.normal(size=(256, 8)).astype(np.float32)
        params = PipelineParams(q_clusters=8, topk=4, m0=16, n_max=16)
        policy = LayerPolicy(topk=4, q_clusters=8)
        out, stats = adacluster_attention(q, k, v, policy, StepState(), seed=1, params=params)
        assert stats.mode == "full"
        assert policy.mode == "full"
        np.testing.assert_array_equal(out, full_attention(q, k, v))

    def test_selected_cluster_recall(self):
        # queries aligned with a quarter of 32 well-separated key components
        spec = LayerSpec(kind="compact", gaussian_components=32, component_sigma=0.5,
                         component_separation=40.0, scale_spread=0.2)
        q, k, v = gen_synthetic(spec, 1024, 32, 1, 1, seed=5)[0][0]
        params = PipelineParams(q_clusters=16, topk=8, m0=32, n_max=1000)
        policy = LayerPolicy(topk=8, q_clusters=16)
        out, stats = adacluster_attention(q, k, v, policy, StepState(), seed=2, params=params)
        assert stats.mode == "sparse"
        env_members = {}
        from adacluster.quest import build_envelopes
        env = build_envelopes(k, stats.key_model)
        rng = np.random.default_rng(0)
        for qi in rng.choice(1024, size=64, replace=False):
            g = int(stats.q_model.assignments[qi])
            gathered = set()
            for c in stats.selection.selected[g]:
                gathered.update(env.members(int(c)).tolist())
            exact = exact_topk_keys(q[qi], k, 16)
            recall = sum(1 for i in exact if int(i) in gathered) / 16
            assert recall >= 0.95

    def test_sparse_output_within_gathered_value_bounds(self):
        q, k, v = head_inputs(3, L=256, D=8, g=8)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000)
        policy = LayerPolicy(topk=3, q_clusters=8)
        out, stats = adacluster_attention(q, k, v, policy, StepState(), seed=3, params=params)
        from adacluster.quest import build_envelopes
        env = build_envelopes(k, stats.key_model)
        for g in range(stats.selection.selected.shape[0]):
            toks = np.concatenate([env.members(int(c)) for c in stats.selection.selected[g]])
            rows = np.flatnonzero(stats.q_model.assignments == g)
            lo, hi = v[toks].min(axis=0), v[toks].max(axis=0)
            assert np.all(out[rows] >= lo - 1e-5)
            assert np.all(out[rows] <= hi + 1e-5)

    def test_density_recomputed_from_raw_selection(self):
        q, k, v = head_inputs(4, L=256, D=8, g=8)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000)
        policy = LayerPolicy(topk=3, q_clusters=8)
        _, stats = adacluster_attention(q, k, v, policy, StepState(), seed=4, params=params)
        counts = stats.key_model.counts
        sel = stats.selection.selected
        want = np.mean([counts[sel[g]].sum() for g in range(sel.shape[0])]) / len(k)
        assert stats.density == pytest.approx(want)


def steps_inputs(seed, steps=3, layers=2, heads=2, L=256, D=8, drift=0.0, sigma=0.3):
    out = []
    for l in range(layers):
        spec = LayerSpec(kind="compact", gaussian_components=8, component_sigma=sigma,
                         component_separation=15.0, drift_sigma=drift)
        out.append(gen_synthetic(spec, L, D, heads, steps, seed + l))
    return [[out[l][t] for l in range(layers)] for t in range(steps)]


class TestRunDenoiseSteps:
    def test_single_step_matches_per_head_calls(self):
        inputs = steps_inputs(0, steps=1, layers=1, heads=2)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000, full_layer_quota=0.0)
        res = run_denoise_steps(inputs, params, seed=42)
        for h, (q, k, v) in enumerate(inputs[0][0]):
            policy = LayerPolicy(topk=3, q_clusters=8)
            out, _ = adacluster_attention(q, k, v, policy, StepState(),
                                          seed=42 + h, params=params)
            np.testing.assert_array_equal(res.outputs[0][0][h], out)

    def test_identical_steps_warm_start_converges_fast(self):
        inputs = steps_inputs(1, steps=3, drift=0.0)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000, full_layer_quota=0.0)
        res = run_denoise_steps(inputs, params, seed=0)
        # step 0 consolidates the multi-stage centers, so later steps on
        # identical inputs start from a fixed point.
        for t in (1, 2):
            for layer in res.stats[t]:
                for hs in layer:
                    assert hs.key_iters <= 1
                    assert hs.query_iters <= 1

    def test_policy_frozen_across_steps(self):
        inputs = steps_inputs(2, steps=3, drift=0.02)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000)
        res = run_denoise_steps(inputs, params, seed=1)
        for l, policy in enumerate(res.policies):
            for t in range(3):
                for h, hs in enumerate(res.stats[t][l]):
                    assert hs.mode == policy.mode
                    if policy.mode == "sparse":
                        assert hs.num_key_clusters == policy.key_cluster_count[h]

    def test_full_quota_forces_worst_layer(self):
        inputs = steps_inputs(3, layers=4, steps=1)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000, full_layer_quota=0.25)
        res = run_denoise_steps(inputs, params, seed=2)
        full_layers = [l for l, p in enumerate(res.policies) if p.mode == "full"]
        worst = int(np.argmax(res.mse_layer))
        assert worst in full_layers

    def test_full_mode_output_bit_equals_full_attention(self):
        inputs = steps_inputs(4, layers=2, steps=2)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000, full_layer_quota=0.5)
        res = run_denoise_steps(inputs, params, seed=3)
        for l, policy in enumerate(res.policies):
            if policy.mode != "full":
                continue
            for t in range(2):
                for h, (q, k, v) in enumerate(inputs[t][l]):
                    np.testing.assert_array_equal(res.outputs[t][l][h], full_attention(q, k, v))

    def test_shape_drift_rejected(self):
        inputs = steps_inputs(5, steps=2)
        q, k, v = inputs[1][0][0]
        inputs[1][0][0] = (q[:-1], k, v)
        with pytest.raises(ContractError):
            run_denoise_steps(inputs, PipelineParams(full_layer_quota=0.0), seed=0)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ParameterError):
            run_denoise_steps([], PipelineParams(), seed=0)

    def test_warm_start_cheaper_than_cold_on_drifted_steps(self):
        inputs = steps_inputs(6, steps=4, layers=1, heads=1, drift=0.02)
        params = PipelineParams(q_clusters=8, topk=3, m0=16, n_max=1000, full_layer_quota=0.0)
        res = run_denoise_steps(inputs, params, seed=4)
        warm_iters = [res.stats[t][0][0].key_iters for t in range(1, 4)]
        cold_iters = res.stats[0][0][0].key_iters
        assert np.mean(warm_iters) <= cold_iters
