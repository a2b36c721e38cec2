import numpy as np
import pytest

from graphdistill import autodiff as ad
from graphdistill.errors import IntegrityError
from graphdistill.losses import (
    DistillWeights,
    batch_inter_cluster,
    batch_path_consistency,
    kernel_matrix,
    kernel_matrix_np,
    loss_ground_truth,
    loss_inter_cluster,
    loss_path_consistency,
    loss_soft_logits,
    loss_whole_graph,
    mmd_poly_sq,
    path_softmax,
    total_loss,
)

from oracles import (
    assert_grads_close,
    autodiff_grads,
    finite_difference_grads,
    path_kl_oracle,
)


class TestGroundTruth:
    def test_uniform_binary(self):
        loss = loss_ground_truth(ad.constant([0.0, 0.0]), 0)
        assert float(loss.values) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_confident_correct(self):
        loss = loss_ground_truth(ad.constant([20.0, 0.0]), 0)
        assert float(loss.values) == pytest.approx(0.0, abs=1e-8)

    def test_confident_wrong_closed_form(self):
        # -log sigmoid(-20) = log(1 + e^20) = 20.000000002061153...
        expected = float(np.log1p(np.exp(20.0)))
        loss = loss_ground_truth(ad.constant([0.0, 20.0]), 0)
        assert float(loss.values) == pytest.approx(expected, rel=1e-12)


class TestSoftLogits:
    def test_identical_logits_zero(self):
        t = np.array([1.3, -0.2, 0.5])
        loss = loss_soft_logits(ad.constant(t.copy()), t)
        assert float(loss.values) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_pair_zero(self):
        loss = loss_soft_logits(ad.constant([0.0, 0.0]), np.zeros(2))
        assert float(loss.values) == pytest.approx(0.0, abs=1e-12)

    def test_swapped_margin_closed_form(self):
        # teacher (1,0), student (0,1): KL = tanh(1/2) = 0.46211715726...
        loss = loss_soft_logits(ad.constant([0.0, 1.0]), np.array([1.0, 0.0]))
        assert float(loss.values) == pytest.approx(np.tanh(0.5), rel=1e-12)

    def test_temperature_scaling(self):
        s, t = np.array([0.3, -0.7]), np.array([1.0, 0.2])
        base = float(loss_soft_logits(ad.constant(s), t, temperature=1.0).values)
        hot = float(loss_soft_logits(ad.constant(s), t, temperature=4.0).values)
        p_t = np.exp(t / 4.0) / np.exp(t / 4.0).sum()
        q = np.exp(s / 4.0) / np.exp(s / 4.0).sum()
        expected = 16.0 * float((p_t * (np.log(p_t) - np.log(q))).sum())
        assert hot == pytest.approx(expected, rel=1e-10)
        assert hot != pytest.approx(base, rel=1e-3)


class TestWholeGraph:
    def test_aligned_zero(self):
        h = np.array([0.3, 1.2, -0.4])
        loss = loss_whole_graph(h, ad.constant(h.copy()))
        assert float(loss.values) == pytest.approx(0.0, abs=1e-14)

    def test_orthogonal_unit_vectors(self):
        loss = loss_whole_graph(np.array([1.0, 0.0]), ad.constant([0.0, 1.0]))
        assert float(loss.values) == pytest.approx(2.0, rel=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        h_t = rng.normal(size=4)
        h_s = rng.normal(size=4)
        base = float(loss_whole_graph(h_t, ad.constant(h_s)).values)
        for c in (0.5, 3.0):
            scaled_t = float(loss_whole_graph(c * h_t, ad.constant(h_s)).values)
            scaled_s = float(loss_whole_graph(h_t, ad.constant(c * h_s)).values)
            assert scaled_t == pytest.approx(base, abs=1e-12)
            assert scaled_s == pytest.approx(base, abs=1e-12)


class TestKernelMatrix:
    def test_identical_rows(self):
        k = kernel_matrix(ad.constant([[1.0, 2.0], [1.0, 2.0]]))
        np.testing.assert_allclose(k.values, np.ones((2, 2)), atol=1e-7)

    def test_orthogonal_rows_identity(self):
        k = kernel_matrix(ad.constant([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(k.values, np.eye(2), atol=1e-7)

    def test_cosine_closed_form(self):
        k = kernel_matrix(ad.constant([[1.0, 0.0], [1.0, 1.0]]))
        assert k.values[0, 1] == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-7)

    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(1)
        reps = rng.normal(size=(6, 4))
        k = kernel_matrix(ad.constant(reps)).values
        assert np.all(k <= 1.0 + 1e-12) and np.all(k >= -1.0 - 1e-12)
        np.testing.assert_allclose(k, k.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(k), np.ones(6), atol=1e-7)


class TestInterCluster:
    def test_equal_kernels_zero(self):
        rng = np.random.default_rng(2)
        reps = rng.normal(size=(3, 5))
        k_t = kernel_matrix_np(reps)
        loss = loss_inter_cluster(kernel_matrix(ad.constant(reps)), k_t)
        assert float(loss.values) == pytest.approx(0.0, abs=1e-20)

    def test_frobenius_arithmetic(self):
        k_s = ad.constant([[1.0, 0.5], [0.5, 1.0]])
        k_t = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss = loss_inter_cluster(k_s, k_t)
        assert float(loss.values) == pytest.approx(0.5, abs=1e-14)

    def test_single_cluster_always_zero(self):
        rng = np.random.default_rng(3)
        s = kernel_matrix(ad.constant(rng.normal(size=(1, 4))))
        t = kernel_matrix_np(rng.normal(size=(1, 4)))
        assert float(loss_inter_cluster(s, t).values) == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch_is_integrity_error(self):
        with pytest.raises(IntegrityError, match="cluster"):
            loss_inter_cluster(ad.constant(np.eye(2)), np.eye(3))

    def test_matches_mmd_on_normalized_rows(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n_c, h = int(rng.integers(1, 7)), int(rng.integers(2, 6))
            a = rng.normal(size=(n_c, h))
            b = rng.normal(size=(n_c, h))
            a_n = a / np.linalg.norm(a, axis=1, keepdims=True)
            b_n = b / np.linalg.norm(b, axis=1, keepdims=True)
            loss = loss_inter_cluster(kernel_matrix(ad.constant(a)), kernel_matrix_np(b))
            assert float(loss.values) == pytest.approx(mmd_poly_sq(a_n, b_n), abs=1e-10)


class TestMMD:
    def test_identical_sets_zero(self):
        rng = np.random.default_rng(5)
        h = rng.normal(size=(4, 3))
        assert mmd_poly_sq(h, h.copy()) == pytest.approx(0.0, abs=1e-20)

    def test_single_rows_scalar_case(self):
        a, b = np.array([1.0, 2.0]), np.array([2.0, 0.5])
        expected = (float(a @ a) - float(b @ b)) ** 2
        assert mmd_poly_sq(a[None], b[None]) == pytest.approx(expected, rel=1e-12)

    def test_row_count_mismatch(self):
        with pytest.raises(IntegrityError):
            mmd_poly_sq(np.ones((2, 2)), np.ones((3, 2)))


class TestPathSoftmax:
    def test_equal_embeddings_uniform(self):
        H = ad.constant(np.ones((4, 3)))
        walk = np.array([0, 1, 2, 3])
        p = path_softmax(H, walk, 0)
        np.testing.assert_allclose(p.values.ravel(), np.full(4, 0.25), atol=1e-12)

    def test_orthogonal_equal_norm_uniform(self):
        H = ad.constant(np.eye(4))
        p = path_softmax(H, np.array([0, 1, 2, 3]), 0)
        # h_0.h_0 = 1 differs from the rest; use anchor-excluded walk nodes.
        q = path_softmax(H, np.array([0, 1, 2, 3]), 0, include_start=False)
        np.testing.assert_allclose(q.values.ravel(), np.full(3, 1 / 3), atol=1e-12)
        assert p.values[0] > p.values[1]

    def test_alternating_walk_closed_form(self):
        H = ad.constant([[1.0, 0.0], [0.0, 1.0]])
        walk = np.array([0, 1, 0, 1])
        p = path_softmax(H, walk, 0).values.ravel()
        raw = np.array([np.e, 1.0, np.e, 1.0])
        np.testing.assert_allclose(p, raw / raw.sum(), rtol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        H = ad.constant(rng.normal(size=(5, 4)) * 10)
        p = path_softmax(H, np.array([2, 0, 4, 4, 1]), 2)
        assert float(p.values.sum()) == pytest.approx(1.0, abs=1e-12)


class TestPathConsistency:
    def test_equal_embeddings_zero(self):
        rng = np.random.default_rng(7)
        H = rng.normal(size=(6, 4))
        walks = [np.array([0, 1, 2]), np.array([3, 4, 5, 3])]
        loss = loss_path_consistency(H, ad.constant(H.copy()), walks)
        assert float(loss.values) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_both_sides_zero(self):
        H_t = np.ones((4, 2))
        H_s = np.full((4, 3), 0.5)
        loss = loss_path_consistency(H_t, ad.constant(H_s), [np.array([0, 1, 2, 3])])
        assert float(loss.values) == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(8)
        H_t = rng.normal(size=(6, 4))
        H_s = rng.normal(size=(6, 4))
        walks = [rng.integers(0, 6, size=5) for _ in range(7)]
        loss = loss_path_consistency(H_t, ad.constant(H_s), walks)
        assert float(loss.values) == pytest.approx(
            path_kl_oracle(H_t, H_s, walks), abs=1e-10
        )

    def test_empty_pool_zero(self):
        loss = loss_path_consistency(np.ones((2, 2)), ad.constant(np.ones((2, 2))), [])
        assert float(loss.values) == 0.0

    def test_singleton_walks_contribute_zero(self):
        rng = np.random.default_rng(9)
        H_t, H_s = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        mixed = [np.array([2]), np.array([0, 1, 0])]
        dense = [np.array([0, 1, 0])]
        half = loss_path_consistency(H_t, ad.constant(H_s), mixed)
        full = loss_path_consistency(H_t, ad.constant(H_s), dense)
        assert float(half.values) == pytest.approx(float(full.values) / 2, rel=1e-12)

    def test_batched_matches_per_walk(self):
        rng = np.random.default_rng(10)
        H_t = rng.normal(size=(8, 4))
        H_s = rng.normal(size=(8, 4))
        walks = np.array([[0, 1, 2, 3], [4, 5, 6, 7], [1, 0, 1, 0]])
        weights = np.full(3, 1.0 / 3.0)
        batched = batch_path_consistency(ad.constant(H_s), H_t, walks, weights)
        listed = loss_path_consistency(H_t, ad.constant(H_s), list(walks))
        assert float(batched.values) == pytest.approx(float(listed.values), abs=1e-12)


class TestTotalLoss:
    def _parts(self, values):
        keys = ("gt", "sl", "graph", "cluster", "path")
        return {k: ad.constant(np.asarray(v)) for k, v in zip(keys, values)}

    def test_weighted_arithmetic(self):
        parts = self._parts((1.0, 1.0, 1.0, 1.0, 1.0))
        w = DistillWeights(lam=0.1, mu=0.1, eta=1e-4, soft=1.0)
        assert float(total_loss(parts, w).values) == pytest.approx(2.2001, abs=1e-12)

    def test_zero_weights_reduce_to_soft_kd(self):
        parts = self._parts((0.7, 0.3, 9.0, 9.0, 9.0))
        w = DistillWeights(lam=0.0, mu=0.0, eta=0.0, soft=1.0)
        assert float(total_loss(parts, w).values) == pytest.approx(1.0, abs=1e-12)

    def test_all_parts_zero_equals_gt(self):
        parts = self._parts((0.42, 0.0, 0.0, 0.0, 0.0))
        w = DistillWeights(lam=0.3, mu=0.2, eta=0.1, soft=1.0)
        assert float(total_loss(parts, w).values) == pytest.approx(0.42, abs=1e-12)


class TestLossProperties:
    def test_nonnegative_and_zero_at_equality(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            k = int(rng.integers(2, 6))
            h = int(rng.integers(2, 8))
            n_c = int(rng.integers(1, 5))
            logits_t = rng.normal(size=k)
            h_t = rng.normal(size=h)
            reps_t = rng.normal(size=(n_c, h))
            h_nodes_t = rng.normal(size=(5, h))
            walks = [rng.integers(0, 5, size=4) for _ in range(3)]

            assert float(loss_soft_logits(ad.constant(rng.normal(size=k)), logits_t).values) >= 0
            assert float(loss_whole_graph(h_t, ad.constant(rng.normal(size=h))).values) >= 0
            k_t = kernel_matrix_np(reps_t)
            k_s = kernel_matrix(ad.constant(rng.normal(size=(n_c, h))))
            assert float(loss_inter_cluster(k_s, k_t).values) >= 0
            assert float(loss_path_consistency(
                h_nodes_t, ad.constant(rng.normal(size=(5, h))), walks).values) >= -1e-12

            # exact zero when the student equals the teacher
            assert float(loss_soft_logits(ad.constant(logits_t.copy()), logits_t).values) == pytest.approx(0, abs=1e-12)
            assert float(loss_whole_graph(h_t, ad.constant(h_t.copy())).values) == pytest.approx(0, abs=1e-12)
            assert float(loss_inter_cluster(kernel_matrix(ad.constant(reps_t.copy())), k_t).values) == pytest.approx(0, abs=1e-15)
            assert float(loss_path_consistency(h_nodes_t, ad.constant(h_nodes_t.copy()), walks).values) == pytest.approx(0, abs=1e-12)


class TestLossGradients:
    def test_finite_difference_all_losses(self):
        rng = np.random.default_rng(12)
        logits_t = rng.normal(size=3)
        h_t = rng.normal(size=4)
        reps_t = rng.normal(size=(3, 4))
        nodes_t = rng.normal(size=(6, 4))
        walks = [rng.integers(0, 6, size=5) for _ in range(4)]

        cases = {
            "gt": ((3,), lambda p: loss_ground_truth(p, 1)),
            "sl": ((3,), lambda p: loss_soft_logits(p, logits_t)),
            "graph": ((4,), lambda p: loss_whole_graph(h_t, p)),
            "cluster": ((3, 4), lambda p: loss_inter_cluster(
                kernel_matrix(p), kernel_matrix_np(reps_t))),
            "path": ((6, 4), lambda p: loss_path_consistency(nodes_t, p, walks)),
        }
        for name, (shape, fn) in cases.items():
            p = ad.parameter(rng.normal(size=shape))

            def loss():
                return fn(p)

            numeric = finite_difference_grads(loss, {"p": p})
            analytic = autodiff_grads(loss, {"p": p})
            assert_grads_close(analytic, numeric, rel_tol=1e-4)

    def test_teacher_side_receives_no_gradient(self):
        rng = np.random.default_rng(13)
        teacher = ad.parameter(rng.normal(size=4))  # even if marked trainable
        student = ad.parameter(rng.normal(size=4))
        loss = loss_whole_graph(teacher.values, student)
        ad.backward(loss)
        assert teacher.grad is None
        assert student.grad is not None


class TestBatchedInterCluster:
    def test_matches_sum_of_per_graph_losses(self):
        rng = np.random.default_rng(14)
        sizes = [2, 3, 1]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        s = rng.normal(size=(6, 4))
        t = rng.normal(size=(6, 4))
        batched = batch_inter_cluster(ad.constant(s), t, offsets, len(sizes))
        manual = 0.0
        for lo, hi in zip(offsets[:-1], offsets[1:]):
            manual += float(loss_inter_cluster(
                kernel_matrix(ad.constant(s[lo:hi])), kernel_matrix_np(t[lo:hi])).values)
        assert float(batched.values) == pytest.approx(manual / 3.0, abs=1e-12)
