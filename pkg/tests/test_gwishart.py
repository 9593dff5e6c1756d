import unittest

import numpy as np
from numpy.testing import assert_allclose

from sums.core import graphs, gwishart
from sums.core.graphs import ProcessGraph, RateGraph
from sums.core.gwishart import GWishartParams
from sums.exceptions import ConvergenceError, ValidationError

from .factories import binary_design


def path_graph(n: int) -> RateGraph:
    adjacency = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adjacency[i, i + 1] = adjacency[i + 1, i] = True
    return RateGraph.from_adjacency(adjacency)


def correlated_psi(dim: int, scale: float = 0.25, rho: float = 0.3) -> np.ndarray:
    return scale * ((1 - rho) * np.eye(dim) + rho * np.ones((dim, dim)))


class TestParams(unittest.TestCase):

    def test_validation(self):
        graph = RateGraph.from_adjacency(~np.eye(2, dtype=bool))
        with self.assertRaises(ValidationError):
            GWishartParams(nu=3.0, psi=np.eye(3), graph=graph)
        with self.assertRaises(ValidationError):
            GWishartParams(nu=3.0, psi=np.array([[1.0, 0.5], [0.0, 1.0]]), graph=graph)
        with self.assertRaises(ValidationError):
            GWishartParams(nu=0.0, psi=np.eye(2), graph=graph)
        with self.assertRaises(ValidationError):
            GWishartParams(nu=3.0, psi=-np.eye(2), graph=graph)

    def test_posterior_params(self):
        graph = path_graph(3)
        prior = GWishartParams(nu=4.0, psi=np.eye(3), graph=graph)
        phi_star = np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 0.0]])
        post = gwishart.posterior_params(phi_star, np.zeros(3), 1.0, prior)
        self.assertEqual(post.nu, 6.0)
        mean = phi_star.mean(axis=0)
        centred = phi_star - mean
        expected = np.eye(3) + centred.T @ centred + (2.0 / 3.0) * np.outer(mean, mean)
        assert_allclose(post.psi, expected)
        self.assertIs(post.graph, graph)


class TestDensity(unittest.TestCase):

    def test_zero_pattern_enforced(self):
        params = GWishartParams(nu=3.0, psi=np.eye(3), graph=path_graph(3))
        omega = np.eye(3)
        self.assertAlmostEqual(gwishart.log_density_unnorm(omega, params), -1.5)
        omega[0, 2] = omega[2, 0] = 0.1
        with self.assertRaises(ValidationError):
            gwishart.log_density_unnorm(omega, params)


class TestSampler(unittest.TestCase):

    def test_full_graph_moments(self):
        dim = 3
        psi = correlated_psi(dim, scale=0.5)
        graph = RateGraph.from_adjacency(~np.eye(dim, dtype=bool))
        params = GWishartParams(nu=3.0, psi=psi, graph=graph)
        rng = np.random.default_rng(21)
        draws = np.array([gwishart.sample_direct(params, rng) for _ in range(10000)])
        expected = (params.nu + dim - 1) * np.linalg.inv(psi)
        se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
        self.assertTrue(np.all(np.abs(draws.mean(axis=0) - expected) < 3.5 * se))

    def test_sparse_graph_draws(self):
        graph = path_graph(4)
        params = GWishartParams(nu=3.0, psi=correlated_psi(4), graph=graph)
        rng = np.random.default_rng(22)
        for _ in range(20):
            omega = gwishart.sample_direct(params, rng)
            self.assertEqual(omega[0, 2], 0.0)
            self.assertEqual(omega[0, 3], 0.0)
            self.assertEqual(omega[1, 3], 0.0)
            assert_allclose(omega, omega.T)
            self.assertTrue(np.all(np.linalg.eigvalsh(omega) > 0))

    def test_completion_convergence_error(self):
        params = GWishartParams(nu=3.0, psi=correlated_psi(4), graph=path_graph(4))
        with self.assertRaises(ConvergenceError) as context:
            gwishart.sample_direct(
                params, np.random.default_rng(0), tol=0.0, max_sweeps=2
            )
        self.assertEqual(context.exception.iterations, 2)

    def test_mvn_precision(self):
        precision = np.array([[2.0, 0.5], [0.5, 1.0]])
        draws = gwishart.sample_mvn_precision(
            np.array([1.0, -1.0]), precision, np.random.default_rng(23), size=40000
        )
        assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.03)
        assert_allclose(np.cov(draws.T), np.linalg.inv(precision), atol=0.03)
        single = gwishart.sample_mvn_precision(
            np.zeros(2), precision, np.random.default_rng(0)
        )
        self.assertEqual(single.shape, (2,))

    def test_normal_logpdf(self):
        from scipy import stats
        precision = np.array([[2.0, 0.5], [0.5, 1.0]])
        x = np.array([[0.3, -0.2], [1.0, 2.0]])
        cov = np.linalg.inv(precision)
        normal = stats.multivariate_normal(mean=np.zeros(2), cov=cov)
        logpdf = gwishart.normal_precision_logpdf(x, np.zeros(2), precision)
        assert_allclose(logpdf, normal.logpdf(x))


class TestNormalisingConstant(unittest.TestCase):

    def test_full_graph_closed_form_matches_wishart(self):
        # I = 2^(df D/2) Gamma_D(df/2) |Psi|^(-df/2) for the Wishart kernel
        psi = correlated_psi(3)
        value = gwishart.log_norm_const_full(4.0, psi)
        self.assertTrue(np.isfinite(value))
        scaled = gwishart.log_norm_const_full(4.0, 2.0 * psi)
        self.assertAlmostEqual(value - scaled, 0.5 * 6.0 * 3 * np.log(2.0), places=10)

    def test_mc_is_exact_on_complete_graph(self):
        psi = correlated_psi(4)
        graph = RateGraph.from_adjacency(~np.eye(4, dtype=bool))
        params = GWishartParams(nu=3.0, psi=psi, graph=graph)
        estimate = gwishart.log_norm_const_mc(params, 200, np.random.default_rng(24))
        full = gwishart.log_norm_const_full(3.0, psi)
        self.assertAlmostEqual(estimate.log_value, full, places=8)
        self.assertAlmostEqual(estimate.std_error, 0.0, places=12)

    def test_block_diagonal_estimate_matches_blocks(self):
        design = binary_design(2)
        graph = graphs.expand(ProcessGraph.empty(2), design)
        psi = correlated_psi(4)
        params = GWishartParams(nu=3.0, psi=psi, graph=graph)
        exact = gwishart.log_norm_const_exact(params)
        self.assertIsNotNone(exact)
        self.assertTrue(exact.exact)
        expected = (gwishart.log_norm_const_full(3.0, psi[:2, :2])
                    + gwishart.log_norm_const_full(3.0, psi[2:, 2:]))
        self.assertAlmostEqual(exact.log_value, expected, places=12)
        estimate = gwishart.log_norm_const_mc(params, 20000, np.random.default_rng(25))
        self.assertFalse(estimate.exact)
        error = abs(estimate.log_value - expected)
        self.assertLess(error, 3 * estimate.std_error + 1e-3)

    def test_dispatch(self):
        rng = np.random.default_rng(26)
        blocks = graphs.expand(ProcessGraph.empty(2), binary_design(2))
        clique_union = GWishartParams(nu=3.0, psi=np.eye(4), graph=blocks)
        self.assertTrue(gwishart.log_norm_const(clique_union, 100, rng).exact)
        sparse = GWishartParams(nu=3.0, psi=correlated_psi(4), graph=path_graph(4))
        self.assertIsNone(gwishart.log_norm_const_exact(sparse))
        estimate = gwishart.log_norm_const(sparse, 500, rng)
        self.assertFalse(estimate.exact)
        self.assertGreater(estimate.std_error, 0.0)

    def test_minimum_draws(self):
        params = GWishartParams(nu=3.0, psi=np.eye(3), graph=path_graph(3))
        with self.assertRaises(ValidationError):
            gwishart.log_norm_const_mc(params, 50, np.random.default_rng(0))
