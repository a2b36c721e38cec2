import numpy as np
import pytest

from graphdistill import autodiff as ad
from graphdistill.data import Graph
from graphdistill.errors import ConfigError
from graphdistill.models import (
    GcnConfig,
    GinConfig,
    StudentConfig,
    gcn_forward,
    gcn_infer,
    gin_forward,
    gin_infer,
    init_gcn_params,
    init_gin_params,
    init_student_params,
    make_batch,
    params_to_arrays,
    readout,
    single_batch,
    student_forward,
    student_infer,
    student_input,
)
from graphdistill.structure import build_struct_cache

from conftest import build_graph
from oracles import (
    assert_grads_close,
    autodiff_grads,
    finite_difference_grads,
    random_er_graph,
)


def identity_gin_params(dim):
    params = {}
    for layer in range(1):
        params[f"layer{layer}.w1"] = ad.parameter(np.eye(dim))
        params[f"layer{layer}.b1"] = ad.parameter(np.zeros(dim))
        params[f"layer{layer}.w2"] = ad.parameter(np.eye(dim))
        params[f"layer{layer}.b2"] = ad.parameter(np.zeros(dim))
    params["head.w"] = ad.parameter(np.eye(dim))
    params["head.b"] = ad.parameter(np.zeros(dim))
    return params


def permute_graph(graph, perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    edges = [(int(inv[u]), int(inv[v])) for u, v in graph.edge_pairs()]
    return Graph.from_edges(graph.num_nodes, edges, graph.features[perm], graph.label)


class TestGinForward:
    def test_isolated_node_identity_passthrough(self):
        g = build_graph(1, [], np.array([[2.0]]))
        cfg = GinConfig(num_layers=1, hidden=1)
        out = gin_forward(g, None, cfg, identity_gin_params(1))
        assert float(out.node_embeddings.values[0, 0]) == pytest.approx(2.0)

    def test_k2_sum_aggregation(self):
        g = build_graph(2, [(0, 1)], np.array([[1.0], [2.0]]))
        cfg = GinConfig(num_layers=1, hidden=1)
        out = gin_forward(g, None, cfg, identity_gin_params(1))
        # node 0 pre-update input: own 1 + neighbor 2 = 3 (identity update keeps it)
        assert float(out.node_embeddings.values[0, 0]) == pytest.approx(3.0)
        assert float(out.node_embeddings.values[1, 0]) == pytest.approx(3.0)

    @pytest.mark.parametrize("readout_mode", ["sum", "attention"])
    def test_permutation_invariance(self, readout_mode):
        rng = np.random.default_rng(0)
        for trial in range(5):
            g = random_er_graph(rng, 20, p=0.2, feature_dim=4)
            cfg = GinConfig(num_layers=2, hidden=8, readout=readout_mode)
            params = init_gin_params(rng, 4, cfg, 3)
            base = gin_forward(g, None, cfg, params).logits.values
            perm = rng.permutation(20)
            permuted = permute_graph(g, perm)
            again = gin_forward(permuted, None, cfg, params).logits.values
            np.testing.assert_allclose(again, base, atol=1e-9)

    def test_node_embeddings_permute_with_nodes(self):
        rng = np.random.default_rng(1)
        g = random_er_graph(rng, 12, p=0.3, feature_dim=3)
        cfg = GinConfig(num_layers=2, hidden=6)
        params = init_gin_params(rng, 3, cfg, 2)
        base = gin_forward(g, None, cfg, params).node_embeddings.values
        perm = rng.permutation(12)
        permuted = permute_graph(g, perm)
        again = gin_forward(permuted, None, cfg, params).node_embeddings.values
        np.testing.assert_allclose(again, base[perm], atol=1e-9)


class TestGcnForward:
    def test_single_node_self_loop_normalization(self):
        g = build_graph(1, [], np.array([[1.0]]))
        cfg = GcnConfig(num_layers=1, hidden=1)
        params = {"layer0.w": ad.parameter(np.eye(1)), "layer0.b": ad.parameter(np.zeros(1)),
                  "head.w": ad.parameter(np.eye(1)), "head.b": ad.parameter(np.zeros(1))}
        out = gcn_forward(g, None, cfg, params)
        assert float(out.node_embeddings.values[0, 0]) == pytest.approx(1.0)

    def test_k2_equal_features_symmetric(self):
        g = build_graph(2, [(0, 1)], np.array([[1.0, 2.0], [1.0, 2.0]]))
        rng = np.random.default_rng(2)
        cfg = GcnConfig(num_layers=2, hidden=5)
        params = init_gcn_params(rng, 2, cfg, 2)
        out = gcn_forward(g, None, cfg, params)
        np.testing.assert_allclose(out.node_embeddings.values[0],
                                   out.node_embeddings.values[1], atol=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        g = random_er_graph(rng, 18, p=0.25, feature_dim=3)
        cfg = GcnConfig(num_layers=3, hidden=8)
        params = init_gcn_params(rng, 3, cfg, 2)
        base = gcn_forward(g, None, cfg, params).logits.values
        perm = rng.permutation(18)
        again = gcn_forward(permute_graph(g, perm), None, cfg, params).logits.values
        np.testing.assert_allclose(again, base, atol=1e-9)


class TestStudentForward:
    def _cache(self, g, seed=0):
        return build_struct_cache(g, 0, seed)

    def test_mlp_ignores_edges(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(6, 3))
        g1 = build_graph(6, [(0, 1), (2, 3)], feats)
        g2 = build_graph(6, [(0, 1), (2, 3), (4, 5), (0, 5)], feats)
        cfg = StudentConfig(kind="mlp", num_layers=3, hidden=8)
        params = init_student_params(rng, 3, cfg, 2)
        out1 = student_forward(g1, None, cfg, params)
        out2 = student_forward(g2, None, cfg, params)
        np.testing.assert_array_equal(out1.logits.values, out2.logits.values)

    def test_ga_mlp_input_rows_on_path3(self, path3):
        cache = self._cache(path3)
        cfg = StudentConfig(kind="ga-mlp", use_lape=False)
        rows = student_input(path3, cache, cfg)
        np.testing.assert_allclose(rows, [[1.0, 1.0], [2.0, 4.0], [3.0, 1.0]])

    def test_lape_padding_keeps_forward_defined(self, k2):
        cache = build_struct_cache(k2, 0, seed=0, k_pe=5)  # k_pe > n-1
        cfg = StudentConfig(kind="ga-mlp", use_lape=True, num_layers=2, hidden=4)
        rng = np.random.default_rng(5)
        rows = student_input(k2, cache, cfg)
        assert rows.shape == (2, 12)  # (1 feat + 5 pe) doubled by aggregation
        params = init_student_params(rng, rows.shape[1], cfg, 2)
        out = student_forward(k2, None, cfg, params, cache=cache)
        assert np.all(np.isfinite(out.logits.values))

    def test_missing_cache_is_config_error(self, k2):
        with pytest.raises(ConfigError, match="cache"):
            student_input(k2, None, StudentConfig(kind="ga-mlp"))

    def test_eval_passes_identical(self, path3):
        cache = self._cache(path3)
        cfg = StudentConfig(kind="ga-mlp", use_lape=True, dropout=0.5)
        rng = np.random.default_rng(6)
        rows = student_input(path3, cache, cfg)
        params = init_student_params(rng, rows.shape[1], cfg, 2)
        # no train rng given -> dropout disabled -> deterministic
        a = student_forward(path3, None, cfg, params, cache=cache).logits.values
        b = student_forward(path3, None, cfg, params, cache=cache).logits.values
        np.testing.assert_array_equal(a, b)

    def test_dropout_changes_training_forward(self, path3):
        cache = self._cache(path3)
        cfg = StudentConfig(kind="mlp", dropout=0.5)
        rng = np.random.default_rng(7)
        params = init_student_params(rng, 1, cfg, 2)
        rng1, rng2 = np.random.default_rng(1), np.random.default_rng(2)
        a = student_forward(path3, None, cfg, params, train_rng=rng1).logits.values
        b = student_forward(path3, None, cfg, params, train_rng=rng2).logits.values
        assert not np.array_equal(a, b)


class TestReadout:
    def test_sum_of_two_onehot_rows(self):
        H = ad.constant([[1.0, 0.0], [0.0, 1.0]])
        out = readout(H, np.zeros(2, dtype=int), 1, "sum", {})
        np.testing.assert_array_equal(out.values, [[1.0, 1.0]])

    def test_attention_zero_gate_is_half_sum(self):
        H = ad.constant([[2.0, 4.0], [6.0, 8.0]])
        params = {"pool.w": ad.parameter(np.zeros((2, 1))),
                  "pool.b": ad.parameter(np.zeros(1))}
        out = readout(H, np.zeros(2, dtype=int), 1, "attention", params)
        np.testing.assert_allclose(out.values, [[4.0, 6.0]], atol=1e-12)

    def test_single_node_cluster_is_gated_row(self):
        rng = np.random.default_rng(8)
        H = ad.constant(rng.normal(size=(3, 4)))
        params = {"pool.w": ad.parameter(rng.normal(size=(4, 1))),
                  "pool.b": ad.parameter(rng.normal(size=1))}
        out = readout(H, np.array([0, 1, 2]), 3, "attention", params)
        gate = 1 / (1 + np.exp(-(H.values @ params["pool.w"].values
                                 + params["pool.b"].values)))
        np.testing.assert_allclose(out.values, gate * H.values, atol=1e-12)

    def test_cluster_sums_add_to_graph_embedding(self):
        rng = np.random.default_rng(9)
        g = random_er_graph(rng, 15, p=0.3, feature_dim=3)
        cache = build_struct_cache(g, 0, seed=0)
        cfg = GinConfig(num_layers=2, hidden=6, readout="sum")
        params = init_gin_params(rng, 3, cfg, 2)
        batch = single_batch(g, cluster_of=cache.clusters.cluster_of)
        out = gin_forward(batch, None, cfg, params)
        np.testing.assert_allclose(
            out.cluster_embeddings.values.sum(axis=0),
            out.graph_embedding.values[0],
            atol=1e-10,
        )


class TestInferenceTwins:
    def test_gin_infer_matches_forward(self):
        rng = np.random.default_rng(10)
        g = random_er_graph(rng, 14, p=0.3, feature_dim=3)
        cfg = GinConfig(num_layers=3, hidden=8, readout="attention")
        params = init_gin_params(rng, 3, cfg, 2)
        batch = single_batch(g)
        slow = gin_forward(batch, None, cfg, params)
        fast = gin_infer(batch, cfg, params_to_arrays(params))
        np.testing.assert_allclose(fast.logits, slow.logits.values, atol=1e-12)
        np.testing.assert_allclose(fast.node_embeddings,
                                   slow.node_embeddings.values, atol=1e-12)

    def test_gcn_infer_matches_forward(self):
        rng = np.random.default_rng(11)
        g = random_er_graph(rng, 14, p=0.3, feature_dim=3)
        cfg = GcnConfig(num_layers=2, hidden=8)
        params = init_gcn_params(rng, 3, cfg, 2)
        batch = single_batch(g)
        slow = gcn_forward(batch, None, cfg, params)
        fast = gcn_infer(batch, cfg, params_to_arrays(params))
        np.testing.assert_allclose(fast.logits, slow.logits.values, atol=1e-12)

    def test_student_infer_matches_forward(self):
        rng = np.random.default_rng(12)
        g = random_er_graph(rng, 10, p=0.3, feature_dim=3)
        cache = build_struct_cache(g, 0, seed=1)
        cfg = StudentConfig(kind="ga-mlp", use_lape=True, num_layers=3, hidden=8)
        rows = student_input(g, cache, cfg)
        params = init_student_params(rng, rows.shape[1], cfg, 2)
        batch = make_batch([g], [rows], [cache.clusters.cluster_of])
        slow = student_forward(batch, None, cfg, params)
        fast = student_infer(batch, cfg, params_to_arrays(params))
        np.testing.assert_allclose(fast.logits, slow.logits.values, atol=1e-12)
        np.testing.assert_allclose(fast.cluster_embeddings,
                                   slow.cluster_embeddings.values, atol=1e-12)


class TestModelGradients:
    def test_gin_gradcheck_on_small_graph(self):
        rng = np.random.default_rng(13)
        g = random_er_graph(rng, 8, p=0.4, feature_dim=3)
        cfg = GinConfig(num_layers=2, hidden=4)
        params = init_gin_params(rng, 3, cfg, 2)

        def loss():
            out = gin_forward(g, None, cfg, params)
            return ad.frobenius_sq(out.logits)

        assert_grads_close(autodiff_grads(loss, params),
                           finite_difference_grads(loss, params), rel_tol=1e-4)

    def test_gcn_gradcheck_on_small_graph(self):
        rng = np.random.default_rng(14)
        g = random_er_graph(rng, 8, p=0.4, feature_dim=3)
        cfg = GcnConfig(num_layers=2, hidden=4, readout="attention")
        params = init_gcn_params(rng, 3, cfg, 2)

        def loss():
            out = gcn_forward(g, None, cfg, params)
            return ad.frobenius_sq(out.logits)

        assert_grads_close(autodiff_grads(loss, params),
                           finite_difference_grads(loss, params), rel_tol=1e-4)

    def test_student_gradcheck(self):
        rng = np.random.default_rng(15)
        g = random_er_graph(rng, 9, p=0.3, feature_dim=3)
        cache = build_struct_cache(g, 0, seed=2)
        cfg = StudentConfig(kind="ga-mlp", use_lape=True, num_layers=3, hidden=4)
        rows = student_input(g, cache, cfg)
        params = init_student_params(rng, rows.shape[1], cfg, 2)
        batch = make_batch([g], [rows], [cache.clusters.cluster_of])

        def loss():
            out = student_forward(batch, None, cfg, params)
            return ad.frobenius_sq(out.logits)

        assert_grads_close(autodiff_grads(loss, params),
                           finite_difference_grads(loss, params), rel_tol=1e-4)
