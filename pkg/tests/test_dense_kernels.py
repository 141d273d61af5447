"""
Unit tests for the dense numerical kernels
"""

import unittest
import sys
import os
import numpy as np

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.dense_kernels import (LowRankFactorPair, bdf_coefficients, compress_factors, matrix_exponential,
                               nare_residual, solve_small_nare_newton, solve_sylvester,
                               truncated_svd_factor)
from src.exceptions import (ConvergenceError, DimensionError, MatrixExponentialOverflow,
                            ProblemDefinitionError, SingularSylvesterError)


class TestSylvester(unittest.TestCase):
    """Bartels-Stewart solves"""

    def test_matches_kronecker_solve(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((5, 5)) + 4.0 * np.eye(5)
        B = rng.standard_normal((3, 3)) + 4.0 * np.eye(3)
        C = rng.standard_normal((5, 3))
        X = solve_sylvester(A, B, C, check=True)
        K = np.kron(np.eye(3), A) + np.kron(B.T, np.eye(5))
        expected = np.linalg.solve(K, C.flatten(order='F')).reshape((5, 3), order='F')
        np.testing.assert_allclose(X, expected, atol=1e-12)

    def test_intersecting_spectra(self):
        with self.assertRaises(SingularSylvesterError):
            solve_sylvester(np.array([[1.0]]), np.array([[-1.0]]), np.array([[1.0]]))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            solve_sylvester(np.eye(2), np.eye(3), np.ones((3, 2)))

    def test_non_finite_input(self):
        with self.assertRaises(ProblemDefinitionError):
            solve_sylvester(np.array([[np.nan]]), np.eye(1), np.ones((1, 1)))


class TestMatrixExponential(unittest.TestCase):
    """Padé exponential with overflow detection"""

    def test_diagonal(self):
        E = matrix_exponential(np.diag([0.0, 1.0, -2.0]))
        np.testing.assert_allclose(E, np.diag(np.exp([0.0, 1.0, -2.0])), rtol=1e-13)

    def test_inverse_is_negated_argument(self):
        rng = np.random.default_rng(8)
        M = rng.standard_normal((6, 6))
        product = matrix_exponential(M) @ matrix_exponential(-M)
        np.testing.assert_allclose(product, np.eye(6), atol=1e-10)

    def test_overflow(self):
        with self.assertRaises(MatrixExponentialOverflow) as ctx:
            matrix_exponential(np.array([[800.0]]))
        self.assertAlmostEqual(ctx.exception.norm, 800.0)


class TestSmallNareNewton(unittest.TestCase):
    """Newton's method on the small NARE"""

    def setUp(self):
        # -4x + x² + 3 = 0 has roots 1 and 3; Newton from 0 reaches the smaller one
        self.A = np.array([[2.0]])
        self.D = np.array([[2.0]])
        self.S = np.array([[1.0]])
        self.Q = np.array([[3.0]])

    def test_scalar_minimal_root(self):
        result = solve_small_nare_newton(self.A, self.D, self.S, self.Q)
        self.assertTrue(result.converged)
        self.assertAlmostEqual(float(result.X[0, 0]), 1.0, places=12)
        self.assertLess(result.residual, 1e-12)

    def test_itermax_raises(self):
        with self.assertRaises(ConvergenceError) as ctx:
            solve_small_nare_newton(self.A, self.D, self.S, self.Q, itermax=1)
        self.assertIn('X', ctx.exception.diagnostics)

    def test_rectangular_residual_vanishes(self):
        rng = np.random.default_rng(1)
        A = rng.random((4, 4)) / 10.0 + 3.0 * np.eye(4)
        D = rng.random((3, 3)) / 10.0 + 2.0 * np.eye(3)
        S = rng.random((3, 4)) / 10.0
        Q = rng.random((4, 3))
        result = solve_small_nare_newton(A, D, S, Q)
        self.assertLess(np.linalg.norm(nare_residual(A, D, S, Q, result.X)), 1e-11)

    def test_frechet_derivative(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((4, 4)) + 3.0 * np.eye(4)
        D = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        S = rng.standard_normal((3, 4))
        Q = rng.standard_normal((4, 3))
        X = rng.standard_normal((4, 3))
        E = rng.standard_normal((4, 3))
        eps = 1e-6

        finite_difference = (nare_residual(A, D, S, Q, X + eps * E)
                             - nare_residual(A, D, S, Q, X - eps * E)) / (2.0 * eps)
        derivative = -(A - X @ S) @ E - E @ (D - S @ X)
        np.testing.assert_allclose(finite_difference, derivative, rtol=1e-7, atol=1e-7)


class TestLowRankTruncation(unittest.TestCase):
    """Truncated SVD factorizations"""

    def test_truncated_svd_rank(self):
        rng = np.random.default_rng(3)
        Y = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 6))
        pair = truncated_svd_factor(Y)
        self.assertEqual(pair.rank, 2)
        np.testing.assert_allclose(pair.to_dense(), Y, atol=1e-12)

    def test_truncated_svd_cap(self):
        Y = np.diag([3.0, 2.0, 1.0])
        pair = truncated_svd_factor(Y, r_max=2)
        self.assertEqual(pair.rank, 2)
        np.testing.assert_allclose(pair.to_dense(), np.diag([3.0, 2.0, 0.0]), atol=1e-12)

    def test_zero_matrix(self):
        pair = truncated_svd_factor(np.zeros((4, 3)))
        self.assertEqual(pair.rank, 0)
        self.assertEqual(pair.shape, (4, 3))

    def test_compress_factors(self):
        rng = np.random.default_rng(4)
        Z1 = rng.standard_normal((30, 2))
        Z2 = rng.standard_normal((20, 2))
        wide1 = np.hstack([Z1, Z1])
        wide2 = np.hstack([Z2, -0.5 * Z2])
        pair = compress_factors(wide1, wide2)
        self.assertEqual(pair.rank, 2)
        np.testing.assert_allclose(pair.to_dense(), 0.5 * Z1 @ Z2.T, atol=1e-12)

    def test_factor_pair_rank_mismatch(self):
        with self.assertRaises(DimensionError):
            LowRankFactorPair(np.ones((3, 2)), np.ones((4, 1)))


class TestBdfCoefficients(unittest.TestCase):
    """BDF coefficient table"""

    def test_table(self):
        self.assertEqual(bdf_coefficients(1), (1.0, (1.0,)))
        self.assertEqual(bdf_coefficients(2), (2.0 / 3.0, (4.0 / 3.0, -1.0 / 3.0)))
        self.assertEqual(bdf_coefficients(3), (6.0 / 11.0, (18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0)))

    def test_alphas_sum_to_one(self):
        for order in (1, 2, 3):
            _, alphas = bdf_coefficients(order)
            self.assertAlmostEqual(sum(alphas), 1.0, places=14)

    def test_unsupported_order(self):
        with self.assertRaises(ProblemDefinitionError):
            bdf_coefficients(4)


if __name__ == '__main__':
    unittest.main()
