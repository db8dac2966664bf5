import numpy as np
import pytest

from preg.analysis import (
    AnalysisError,
    infinite_gcn,
    intra_class_distance,
    minimize_preg_descent,
    row_dispersion,
    quadratic_form_residual,
    write_trace_csv,
)
from preg.graph import build_graph

from conftest import random_connected_graph


def k3_loops():
    return build_graph([(0, 1), (1, 2), (0, 2)], 3, add_self_loops=True)


class TestRowDispersion:
    def test_constant(self):
        assert row_dispersion(np.tile([1.0, -2.0], (5, 1))) == 0.0

    def test_two_rows(self):
        assert row_dispersion(np.array([[0.0, 0.0], [1.0, 0.0]])) == 1.0

    def test_translation_invariant(self, rng):
        Z = rng.standard_normal((6, 3))
        shifted = Z + rng.standard_normal(3)
        assert row_dispersion(shifted) == pytest.approx(row_dispersion(Z), abs=1e-12)

    def test_matches_pairwise_definition(self, rng):
        Z = rng.standard_normal((7, 4))
        brute = max(np.abs(Z[i] - Z[j]).max() for i in range(7) for j in range(7))
        assert row_dispersion(Z) == pytest.approx(brute, abs=1e-15)


class TestInfiniteGcn:
    def test_k3(self):
        Z = np.array([[3.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
        rep = infinite_gcn(k3_loops(), Z)
        assert rep.converged
        np.testing.assert_allclose(rep.limit, np.ones((3, 2)), atol=1e-12)
        A = np.full((3, 3), 1 / 3)
        np.testing.assert_allclose(rep.limit, np.linalg.matrix_power(A, 50) @ Z, atol=1e-12)

    def test_constant_rows(self, rng):
        g = random_connected_graph(10, 5, rng, self_loops=True)
        rep = infinite_gcn(g, np.tile([0.3, 0.7], (10, 1)))
        assert rep.converged and rep.iterations == 0

    def test_bipartite_oscillates(self, path3, path_Z):
        with pytest.warns(RuntimeWarning):
            rep = infinite_gcn(path3, path_Z, max_iter=200)
        assert not rep.converged
        assert rep.warnings
        assert rep.trace[-1] == pytest.approx(1.0)

    def test_disconnected(self):
        with pytest.raises(AnalysisError):
            infinite_gcn(build_graph([(0, 1), (2, 3)], 4, add_self_loops=True), np.eye(4))

    def test_limit_is_degree_weighted_mean(self, rng):
        # the left Perron vector of D^-1 A is proportional to degree
        g = random_connected_graph(30, 30, rng, self_loops=True)
        Z = rng.standard_normal((30, 3))
        rep = infinite_gcn(g, Z, tol=1e-12, max_iter=100_000)
        d = g.degrees / g.degrees.sum()
        np.testing.assert_allclose(rep.limit[0], d @ Z, atol=1e-10)


class TestQuadraticFormResidual:
    def test_path(self, path3, path_Z):
        assert quadratic_form_residual(path3, path_Z) < 1e-15

    def test_zero(self, rng):
        g = random_connected_graph(20, 20, rng)
        assert quadratic_form_residual(g, np.zeros((20, 3))) == 0.0

    def test_random(self, rng):
        g = random_connected_graph(50, 60, rng)
        assert quadratic_form_residual(g, rng.standard_normal((50, 5))) < 1e-9

    def test_dense_oracle(self, rng):
        g = random_connected_graph(15, 10, rng)
        A = np.zeros((15, 15))
        for a, b in g.edge_list():
            A[a, b] = A[b, a] = 1.0
        L = np.eye(15) - A / A.sum(axis=1, keepdims=True)
        Z = rng.standard_normal((15, 3))
        lhs = 0.5 * ((A / A.sum(axis=1, keepdims=True) @ Z - Z) ** 2).sum()
        rhs = 0.5 * np.sum(Z * (L.T @ L @ Z))
        assert lhs == pytest.approx(rhs, rel=1e-12)
        assert quadratic_form_residual(g, Z) < 1e-12


class TestDescent:
    def test_se_path(self, path3, path_Z):
        res = minimize_preg_descent(path3, path_Z, "squared_error", lr=0.1, steps=2000)
        assert res.dispersion[-1] < 1e-3

    def test_kl_constant_start(self, rng):
        g = random_connected_graph(12, 12, rng)
        Z0 = np.tile(rng.standard_normal(3), (12, 1))
        res = minimize_preg_descent(g, Z0, "kl_divergence", lr=0.5, steps=50)
        assert max(res.dispersion) == 0.0
        assert max(res.values) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("variant", ["squared_error", "cross_entropy", "kl_divergence"])
    def test_nonincreasing_small_step(self, variant, rng):
        g = random_connected_graph(20, 20, rng)
        res = minimize_preg_descent(g, rng.standard_normal((20, 3)), variant, lr=0.01, steps=300)
        assert np.all(np.diff(res.values) <= 1e-12)

    @pytest.mark.parametrize("variant", ["cross_entropy", "kl_divergence"])
    def test_row_means_conserved(self, variant, rng):
        # softmax-based phi is blind to per-row shifts, so gradient rows sum to zero
        g = random_connected_graph(15, 15, rng)
        Z0 = rng.standard_normal((15, 4))
        res = minimize_preg_descent(g, Z0, variant, lr=0.5, steps=200)
        np.testing.assert_allclose(res.Z.mean(axis=1), Z0.mean(axis=1), atol=1e-12)

    def test_diverges(self, rng):
        g = random_connected_graph(10, 10, rng)
        with pytest.raises(AnalysisError):
            minimize_preg_descent(g, rng.standard_normal((10, 2)), "squared_error", lr=1e3, steps=500)

    def test_disconnected(self):
        with pytest.raises(AnalysisError):
            minimize_preg_descent(build_graph([(0, 1), (2, 3)], 4), np.eye(4), "squared_error")


class TestOmega:
    def test_collapsed_classes(self):
        Z = np.array([[1.0, 1.0], [1.0, 1.0], [3.0, 0.0]])
        assert intra_class_distance(Z, np.array([0, 0, 1])) == 0.0

    def test_example(self):
        Z = np.array([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0], [5.0, 5.0]])
        assert intra_class_distance(Z, np.array([0, 0, 1, 1])) == pytest.approx(0.5)

    def test_translation_invariant(self, rng):
        Z = rng.standard_normal((20, 3))
        labels = rng.integers(0, 4, 20)
        a = intra_class_distance(Z, labels)
        assert intra_class_distance(Z + rng.standard_normal(3), labels) == pytest.approx(a, rel=1e-12)


def test_trace_csv(tmp_path):
    p = tmp_path / "t.csv"
    write_trace_csv(p, [(0, 1.5, 0.25), (1, 0.5, 0.125)])
    assert p.read_text() == "step,value,dispersion\n0,1.5,0.25\n1,0.5,0.125\n"
