import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from preg.graph import build_graph, normalize_adjacency
from preg.nn import (
    ModelParams,
    dropout_mask,
    finite_diff_gradcheck,
    glorot_init,
    init_params,
    model_backward,
    model_forward,
    softmax_rows,
)

from conftest import random_connected_graph


class TestGlorot:
    def test_bound(self, rng):
        W = glorot_init(4, 6, rng)
        assert W.shape == (4, 6)
        assert np.abs(W).max() <= np.sqrt(0.6)

    def test_seeded(self):
        a = glorot_init(5, 3, np.random.default_rng(7))
        b = glorot_init(5, 3, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_single_entry(self, rng):
        assert abs(glorot_init(1, 1, rng)[0, 0]) <= np.sqrt(3.0)

    def test_rejects_empty(self, rng):
        with pytest.raises(ValueError):
            glorot_init(0, 3, rng)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax_rows(np.zeros((1, 2))), [[0.5, 0.5]])

    def test_no_overflow(self):
        P = softmax_rows(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(P))
        np.testing.assert_allclose(P, [[1.0, 0.0]], atol=1e-300)

    def test_log_ratio(self):
        np.testing.assert_allclose(softmax_rows(np.log([[1.0, 3.0]])), [[0.25, 0.75]], rtol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e4, 1e4, allow_nan=False)))
    def test_rows_sum_to_one(self, Z):
        np.testing.assert_allclose(softmax_rows(Z).sum(axis=1), 1.0, atol=1e-12)


class TestDropout:
    def test_p_zero_is_identity(self, rng):
        np.testing.assert_array_equal(dropout_mask((3, 4), 0.0, rng), 1.0)

    def test_mask_values(self, rng):
        m = dropout_mask((50, 50), 0.5, rng)
        assert set(np.unique(m)) <= {0.0, 2.0}

    def test_unbiased(self, rng):
        # mean of 200k inverted-dropout samples of x=1: sd per sample is 1 at p=0.5
        n = 200_000
        m = dropout_mask((n,), 0.5, rng)
        assert abs(m.mean() - 1.0) < 3.0 / np.sqrt(n)

    def test_bad_p(self, rng):
        with pytest.raises(ValueError):
            dropout_mask((2,), 1.0, rng)


def _setup(kind, rng, n=5, F=4, H=6, C=3):
    g = random_connected_graph(n, n, rng)
    op = normalize_adjacency(g, "symmetric")
    X = rng.standard_normal((n, F))
    params = ModelParams(kind, glorot_init(F, H, rng), glorot_init(H, C, rng))
    return op, X, params


class TestForward:
    def test_shape(self, rng):
        op, X, _ = _setup("gcn", rng, n=3)
        params = init_params("gcn", 4, 2, rng, hidden=8)
        Z, _ = model_forward(params, X, op)
        assert Z.shape == (3, 2)

    def test_default_hidden(self, rng):
        assert init_params("gcn", 4, 2, rng).W0.shape == (4, 64)
        assert init_params("mlp", 4, 2, rng).W0.shape == (4, 16)

    def test_mlp_zero_weights(self, rng):
        params = ModelParams("mlp", np.zeros((4, 8)), np.zeros((8, 2)))
        Z, _ = model_forward(params, rng.standard_normal((3, 4)), None)
        np.testing.assert_array_equal(Z, 0.0)

    def test_gcn_on_self_loops_equals_mlp(self, rng):
        g = build_graph([], 6, add_self_loops=True)
        op = normalize_adjacency(g, "symmetric")
        X = rng.standard_normal((6, 4))
        W0, W1 = glorot_init(4, 8, rng), glorot_init(8, 3, rng)
        Zg, _ = model_forward(ModelParams("gcn", W0, W1), X, op)
        Zm, _ = model_forward(ModelParams("mlp", W0, W1), X, None)
        np.testing.assert_allclose(Zg, Zm, atol=1e-15)

    def test_dense_reference(self, rng):
        op, X, params = _setup("gcn", rng, n=7)
        A = op.to_dense()
        ref = A @ np.maximum(A @ X @ params.W0, 0) @ params.W1
        Z, _ = model_forward(params, X, op)
        np.testing.assert_allclose(Z, ref, atol=1e-14)

    def test_shape_mismatch(self, rng):
        op, X, params = _setup("gcn", rng)
        with pytest.raises(ValueError):
            model_forward(params, X[:, :2], op)

    def test_eval_has_no_dropout(self, rng):
        op, X, params = _setup("gcn", rng)
        a, _ = model_forward(params, X, op, dropout_p=0.5, training=False)
        b, _ = model_forward(params, X, op)
        np.testing.assert_array_equal(a, b)


class TestBackward:
    @pytest.mark.parametrize("kind", ["gcn", "mlp"])
    def test_zero_upstream(self, kind, rng):
        op, X, params = _setup(kind, rng)
        Z, cache = model_forward(params, X, op)
        dW0, dW1 = model_backward(cache, params, np.zeros_like(Z))
        assert not dW0.any() and not dW1.any()

    @pytest.mark.parametrize("kind", ["gcn", "mlp"])
    @pytest.mark.parametrize("dropout", [0.0, 0.5])
    def test_matches_finite_differences(self, kind, dropout, rng):
        op, X, params = _setup(kind, rng)
        target = rng.standard_normal((5, 3))
        mask_rng_seed = 99

        def loss_and_grad(p):
            # frozen dropout mask: same seed on every call
            Z, cache = model_forward(p, X, op, dropout, dropout > 0, np.random.default_rng(mask_rng_seed))
            r = Z - target
            return 0.5 * float((r * r).sum()), model_backward(cache, p, r)

        assert finite_diff_gradcheck(loss_and_grad, params, eps=1e-5) < 1e-6

    def test_mlp_hand_chain_rule(self):
        # 2x2 case in the ReLU-linear region: dW1 = H^T dZ
        X = np.array([[1.0, 2.0], [3.0, 1.0]])
        params = ModelParams("mlp", np.eye(2), np.eye(2))
        dZ = np.array([[0.5, -1.0], [2.0, 0.25]])
        _, cache = model_forward(params, X, None)
        dW0, dW1 = model_backward(cache, params, dZ)
        np.testing.assert_allclose(dW1, X.T @ dZ)
        np.testing.assert_allclose(dW0, X.T @ dZ)

    def test_stale_cache(self, rng):
        op, X, params = _setup("gcn", rng)
        _, cache = model_forward(params, X, op)
        other = ModelParams("gcn", glorot_init(4, 6, rng), glorot_init(6, 2, rng))
        with pytest.raises(ValueError):
            model_backward(cache, other, np.zeros((5, 2)))


class TestGradcheck:
    def test_quadratic(self, rng):
        params = ModelParams("mlp", rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))

        def f(p):
            return 0.5 * sum(float((w * w).sum()) for w in p.arrays()), (p.W0.copy(), p.W1.copy())

        # central differences are exact on a quadratic; a wide step keeps rounding noise small
        assert finite_diff_gradcheck(f, params, eps=1e-3) < 1e-9

    def test_detects_wrong_gradient(self, rng):
        params = ModelParams("mlp", rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))

        def f(p):
            return 0.5 * sum(float((w * w).sum()) for w in p.arrays()), (2 * p.W0, p.W1.copy())

        assert finite_diff_gradcheck(f, params) > 0.1

    def test_subsample(self, rng):
        params = ModelParams("mlp", rng.standard_normal((20, 30)), rng.standard_normal((30, 5)))

        def f(p):
            return 0.5 * sum(float((w * w).sum()) for w in p.arrays()), (p.W0.copy(), p.W1.copy())

        assert finite_diff_gradcheck(f, params, eps=1e-3, max_coords=200, rng=rng) < 1e-7

    def test_zero_eps(self, rng):
        params = ModelParams("mlp", np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(ValueError):
            finite_diff_gradcheck(lambda p: (0.0, (p.W0, p.W1)), params, eps=0.0)

    def test_nonfinite_loss(self):
        params = ModelParams("mlp", np.ones((2, 2)), np.ones((2, 2)))
        with pytest.raises(FloatingPointError):
            finite_diff_gradcheck(lambda p: (float("nan"), (p.W0, p.W1)), params)
