import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from profilenet.errors import NodeMismatch, NotPositiveDefinite, TooFewRows
from profilenet.ggm import (betweenness, bootstrap_network, centrality, compare_networks, comparison_to_csv,
                            ebic_score, estimate_network, glasso_fit, glasso_objective, network_from_weights,
                            partial_correlations, strength)
from profilenet.linalg import correlation_matrix

from oracles import chain_data, kkt_violation, proximal_gradient


def random_corr(seed, d, n=None):
    rng = np.random.default_rng(seed)
    n = n or 3 * d
    return correlation_matrix(rng.standard_normal((n, d)) @ rng.standard_normal((d, d)))


class TestPartialCorrelations:
    def test_identity(self):
        np.testing.assert_array_equal(partial_correlations(np.eye(4)), np.zeros((4, 4)))

    def test_three_variable_recursion(self):
        r12, r23, r13 = 0.5, 0.5, 0.25
        S = np.array([[1, r12, r13], [r12, 1, r23], [r13, r23, 1]])
        P = partial_correlations(S)
        # first-order formula conditioning on the third variable
        assert P[0, 2] == pytest.approx((r13 - r12 * r23) / math.sqrt((1 - r12**2) * (1 - r23**2)), abs=1e-14)
        assert P[0, 2] == pytest.approx(0.0, abs=1e-14)
        expected = (0.5 - 0.125) / math.sqrt(0.75 * 0.9375)
        assert P[0, 1] == pytest.approx(expected, abs=1e-12)
        assert P[0, 1] == pytest.approx(0.4472, abs=1e-4)

    def test_singular(self):
        with pytest.raises(NotPositiveDefinite):
            partial_correlations(np.ones((3, 3)))


class TestGlasso:
    @pytest.mark.parametrize("seed", range(5))
    def test_lambda_zero_is_inverse(self, seed):
        S = random_corr(seed, 6)
        res = glasso_fit(S, 0.0, tol=1e-12)
        np.testing.assert_allclose(res.precision, np.linalg.inv(S), atol=1e-5)

    @pytest.mark.parametrize("seed", range(5))
    def test_lambda_max_gives_diagonal(self, seed):
        S = random_corr(seed, 5)
        lam = np.max(np.abs(S - np.diag(np.diag(S))))
        theta = glasso_fit(S, lam).precision
        assert np.count_nonzero(theta - np.diag(np.diag(theta))) == 0
        np.testing.assert_allclose(np.diag(theta), 1 / np.diag(S))

    @pytest.mark.parametrize("seed", range(6))
    def test_three_by_three_brute_force(self, seed):
        S = random_corr(seed, 3, n=8)
        res = glasso_fit(S, 0.1, tol=1e-12)
        _, best = proximal_gradient(S, 0.1)
        assert glasso_objective(res.precision, S, 0.1) == pytest.approx(best, abs=1e-4)
        assert glasso_objective(res.precision, S, 0.1) >= best - 1e-8

    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 7), frac=st.floats(0.0, 1.0))
    def test_subgradient_certificate(self, seed, d, frac):
        S = random_corr(seed, d)
        lam = frac * np.max(np.abs(S - np.diag(np.diag(S))))
        res = glasso_fit(S, lam, tol=1e-10)
        assert res.converged
        assert kkt_violation(res.precision, S, lam) <= 1e-4
        assert np.array_equal(res.precision, res.precision.T)

    def test_warm_start_same_solution(self):
        S = random_corr(3, 6)
        cold = glasso_fit(S, 0.05, tol=1e-12)
        warm = glasso_fit(S, 0.05, tol=1e-12, warm=glasso_fit(S, 0.2, tol=1e-12))
        np.testing.assert_allclose(warm.precision, cold.precision, atol=1e-8)

    def test_non_convergence_flagged(self, caplog):
        res = glasso_fit(random_corr(1, 6), 0.01, tol=1e-14, max_iter=1)
        assert not res.converged and "did not converge" in caplog.text


class TestEBIC:
    def test_hand_value(self):
        theta = np.array([[2.0, -0.5, 0.0], [-0.5, 2.0, 0.3], [0.0, 0.3, 1.5]])
        S = np.array([[1.0, 0.2, 0.1], [0.2, 1.0, -0.1], [0.1, -0.1, 1.0]])
        n, gamma = 100, 0.5
        det = 2 * (2 * 1.5 - 0.09) - (-0.5) * (-0.5 * 1.5 - 0.0) + 0.0
        tr = 2 + 2 + 1.5 + 2 * (0.2 * -0.5 + 0.1 * 0.0 + -0.1 * 0.3)
        L = n / 2 * (math.log(det) - tr)
        expected = -2 * L + 2 * math.log(n) + 4 * gamma * 2 * math.log(3)
        assert ebic_score(theta, S, n, gamma) == pytest.approx(expected, abs=1e-8)

    def test_gamma_zero_is_bic(self):
        theta = np.array([[1.5, 0.2], [0.2, 1.5]])
        S = np.eye(2)
        L = 50 / 2 * (math.log(1.5**2 - 0.04) - 3.0)
        assert ebic_score(theta, S, 50, 0.0) == pytest.approx(-2 * L + math.log(50), abs=1e-10)

    def test_no_edges(self):
        theta = np.diag([1.0, 2.0, 3.0])
        S = np.eye(3)
        L = 10 / 2 * (math.log(6.0) - 6.0)
        assert ebic_score(theta, S, 10, 0.5) == pytest.approx(-2 * L, abs=1e-12)


class TestEstimateNetwork:
    @pytest.mark.parametrize("seed", range(5))
    def test_independent_columns_sparse(self, seed):
        X = np.random.default_rng(seed).standard_normal((2000, 6))
        assert len(estimate_network(X).edges()) <= 1

    @pytest.mark.parametrize("seed", range(3))
    def test_chain_recovered(self, seed):
        net = estimate_network(chain_data(seed, 5000))
        for i in range(4):
            assert net.weights[i, i + 1] > 0
        assert len(net.edges()) >= 4

    def test_too_few_rows(self, rng):
        with pytest.raises(TooFewRows):
            estimate_network(rng.standard_normal((5, 5)))

    @given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100.0), col=st.integers(0, 4))
    def test_scale_invariance(self, seed, scale, col):
        X = chain_data(seed, 300)
        Y = X.copy()
        Y[:, col] *= scale
        a, b = estimate_network(X), estimate_network(Y)
        np.testing.assert_allclose(b.weights, a.weights, atol=1e-8)

    @pytest.mark.parametrize("seed", [0, 1, 26, 45, 56, 57])
    def test_edge_count_path_certified(self, seed):
        # The edge count of exact glasso solutions need not be monotone in lambda.
        # Where the path's count rises with lambda, both solutions must be
        # certified optima, so the non-monotonicity is genuine and not a solver defect.
        X = chain_data(seed, 200, d=6)
        net = estimate_network(X)
        S = correlation_matrix(X)
        assert np.all(np.diff(net.lambdas) < 0)
        for k in np.flatnonzero(np.diff(net.edge_counts) < 0):
            for lam in net.lambdas[k:k + 2]:
                assert kkt_violation(glasso_fit(S, lam, tol=1e-10).precision, S, lam) <= 1e-4

    def test_edge_count_non_monotone_example(self):
        # certified optima at two adjacent grid points: fewer edges at the smaller lambda
        X = chain_data(26, 200, d=6)
        net = estimate_network(X)
        S = correlation_matrix(X)
        k = int(np.flatnonzero(np.diff(net.edge_counts) < 0)[0])
        counts = []
        for lam in net.lambdas[k:k + 2]:
            theta = glasso_fit(S, lam, tol=1e-12).precision
            assert kkt_violation(theta, S, lam) <= 1e-10
            off = np.abs(theta[np.triu_indices(6, 1)])
            assert np.all((off == 0) | (off > 1e-4))
            counts.append(int(np.count_nonzero(off)))
        assert counts[1] < counts[0]

    def test_selected_is_ebic_minimum(self):
        net = estimate_network(chain_data(0, 500))
        k = int(np.argmin(net.ebic))
        assert net.lam == net.lambdas[k]
        assert len(net.edges()) == net.edge_counts[k]

    def test_grid_size(self):
        net = estimate_network(chain_data(1, 500), grid_size=7)
        assert len(net.lambdas) == 7
        assert net.lambdas[-1] == pytest.approx(0.01 * net.lambdas[0])

    def test_edge_list_csv(self):
        net = network_from_weights([[0, 0.3, 0], [0.3, 0, -0.2], [0, -0.2, 0]], ["a", "b", "c"])
        assert net.edge_list_csv().splitlines() == ["node_a,node_b,weight", "a,b,0.3", "b,c,-0.2"]


def to_nx(W):
    G = nx.Graph()
    G.add_nodes_from(range(len(W)))
    for i, j in itertools.combinations(range(len(W)), 2):
        if W[i, j] != 0:
            G.add_edge(i, j, length=1 / abs(W[i, j]))
    return G


class TestCentrality:
    def test_empty(self):
        net = network_from_weights(np.zeros((3, 3)))
        np.testing.assert_array_equal(strength(net), 0.0)
        np.testing.assert_array_equal(betweenness(net), 0.0)

    def test_path(self):
        net = network_from_weights([[0, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0]], list("ABC"))
        np.testing.assert_allclose(strength(net), [0.5, 1.0, 0.5])
        np.testing.assert_allclose(betweenness(net), [0, 1, 0])

    def test_negative_weight_absolute(self):
        net = network_from_weights([[0, -0.4], [-0.4, 0]])
        np.testing.assert_allclose(strength(net), [0.4, 0.4])
        np.testing.assert_allclose(strength(net, signed=True), [-0.4, -0.4])

    def test_triangle(self):
        W = np.full((3, 3), 0.3)
        np.testing.assert_array_equal(betweenness(network_from_weights(W)), 0.0)

    def test_four_cycle(self):
        W = np.zeros((4, 4))
        for i in range(4):
            W[i, (i + 1) % 4] = W[(i + 1) % 4, i] = 0.3
        np.testing.assert_allclose(betweenness(network_from_weights(W)), 0.5)

    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 9), density=st.floats(0.2, 1.0))
    def test_matches_networkx(self, seed, d, density):
        rng = np.random.default_rng(seed)
        W = np.triu(rng.uniform(-1, 1, (d, d)) * (rng.random((d, d)) < density), 1)
        W = W + W.T
        ref = nx.betweenness_centrality(to_nx(W), weight="length", normalized=False)
        np.testing.assert_allclose(betweenness(network_from_weights(W)), [ref[i] for i in range(d)], atol=1e-9)

    def test_equal_length_ties_match_networkx(self):
        W = np.zeros((6, 6))
        for i, j in [(0, 1), (1, 2), (0, 3), (3, 2), (2, 4), (4, 5), (2, 5)]:
            W[i, j] = W[j, i] = 0.5
        ref = nx.betweenness_centrality(to_nx(W), weight="length", normalized=False)
        np.testing.assert_allclose(betweenness(network_from_weights(W)), [ref[i] for i in range(6)], atol=1e-12)

    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 8))
    def test_permutation_equivariance(self, seed, d):
        rng = np.random.default_rng(seed)
        W = np.triu(rng.uniform(-1, 1, (d, d)) * (rng.random((d, d)) < 0.6), 1)
        W = W + W.T
        net = network_from_weights(W)
        perm = rng.permutation(d)
        c, cp = centrality(net), centrality(net.permuted(perm))
        np.testing.assert_allclose(cp.strength, c.strength[perm], atol=1e-12)
        np.testing.assert_allclose(cp.betweenness, c.betweenness[perm], atol=1e-9)

    def test_zscores(self):
        net = network_from_weights([[0, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0]])
        zs, zb = centrality(net).zscores()
        assert zs.mean() == pytest.approx(0.0, abs=1e-12) and zs.std(ddof=1) == pytest.approx(1.0)


class TestBootstrap:
    def test_single_replicate(self):
        X = chain_data(0, 300, d=4)
        rep = bootstrap_network(X, 1, seed=3, grid_size=20)
        np.testing.assert_array_equal(rep.low, rep.samples[0])
        np.testing.assert_array_equal(rep.high, rep.samples[0])

    def test_deterministic(self):
        X = chain_data(1, 300, d=4)
        a = bootstrap_network(X, 5, seed=9, grid_size=20)
        b = bootstrap_network(X, 5, seed=9, grid_size=20, n_jobs=2)
        assert a.to_csv() == b.to_csv()
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_strong_edge_interval_excludes_zero(self):
        # precision with partial correlation 0.6 between the first two variables
        K = np.array([[1.0, -0.6, 0.0], [-0.6, 1.0, 0.0], [0.0, 0.0, 1.0]])
        X = np.random.default_rng(2).multivariate_normal(np.zeros(3), np.linalg.inv(K), size=2000)
        rep = bootstrap_network(X, 200, seed=1, grid_size=30)
        assert rep.edges[0] == ("v1", "v2")
        assert rep.low[0] > 0
        assert rep.point[0] == pytest.approx(0.6, abs=0.06)

    def test_csv(self):
        rep = bootstrap_network(chain_data(2, 200, d=3), 3, seed=0, grid_size=10)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "node_a,node_b,estimate,ci_low,ci_high,n_replicates,n_failed"
        assert len(lines) == 4


class TestCompare:
    def _net(self, W, names=("a", "b", "c")):
        return network_from_weights(np.array(W, dtype=float), list(names))

    def test_identical(self):
        a = self._net([[0, 0.3, 0], [0.3, 0, 0], [0, 0, 0]])
        rows = compare_networks(a, a)
        assert all(r.difference == 0 for r in rows)
        assert {r.pattern for r in rows} == {"both", "neither"}

    def test_only_a(self):
        a = self._net([[0, 0.3, 0], [0.3, 0, 0], [0, 0, 0]])
        b = self._net(np.zeros((3, 3)))
        assert compare_networks(a, b)[0].pattern == "only-a"
        assert compare_networks(b, a)[0].pattern == "only-b"
        assert comparison_to_csv(compare_networks(a, b)).splitlines()[1] == "a,b,0.3,0,0.3,only-a"

    def test_node_mismatch(self):
        with pytest.raises(NodeMismatch):
            compare_networks(self._net(np.zeros((3, 3))), self._net(np.zeros((3, 3)), names="xyz"))
