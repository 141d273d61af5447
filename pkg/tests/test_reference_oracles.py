"""
Unit tests for the dense reference oracles
"""

import unittest
import sys
import os
import numpy as np

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.dense_kernels import solve_small_nare_newton
from src.exceptions import ConvergenceError, OracleScaleError, ProblemDefinitionError
from src.problem import TransportParams, build_transport_problem
from src.reference_oracles import (direct_exp_projected, embedding_matrix, integrate_dense,
                                   nare_minimal_solution, solve_ndre_direct_exp)


def scalar_problem(q=3.0, x0=0.0):
    """x' = x² - 4x + q"""
    return {'A': np.array([[2.0]]), 'D': np.array([[2.0]]), 'S': np.array([[1.0]]),
            'Q': np.array([[q]]), 'X0': np.array([[x0]])}


class TestDirectExponential(unittest.TestCase):
    """Dense linear-embedding solution"""

    def test_embedding_layout(self):
        dense = {'A': np.eye(3), 'D': 2.0 * np.eye(2), 'S': np.ones((2, 3)), 'Q': np.ones((3, 2)),
                 'X0': np.zeros((3, 2))}
        H = embedding_matrix(dense)
        self.assertEqual(H.shape, (5, 5))
        np.testing.assert_allclose(H[:2, :2], 2.0 * np.eye(2))
        np.testing.assert_allclose(H[2:, 2:], -np.eye(3))
        np.testing.assert_allclose(H[:2, 2:], -np.ones((2, 3)))

    def test_initial_value_at_zero(self):
        trajectory = solve_ndre_direct_exp(scalar_problem(x0=0.25), [0.0, 1.0])
        self.assertEqual(float(trajectory.values[0][0, 0]), 0.25)

    def test_linear_closed_form(self):
        rng = np.random.default_rng(0)
        Q = rng.random((3, 2))
        dense = {'A': 1.5 * np.eye(3), 'D': 0.5 * np.eye(2), 'S': np.zeros((2, 3)), 'Q': Q,
                 'X0': np.zeros((3, 2))}
        trajectory = solve_ndre_direct_exp(dense, [0.5, 1.0, 4.0])
        for t, X in zip(trajectory.times, trajectory.values):
            np.testing.assert_allclose(X, Q * (1.0 - np.exp(-2.0 * t)) / 2.0, atol=1e-12)

    def test_scalar_riccati(self):
        trajectory = solve_ndre_direct_exp(scalar_problem(), [1.0, 2.0])
        growth = np.exp(2.0 * trajectory.times)
        expected = 3.0 * (growth - 1.0) / (3.0 * growth - 1.0)
        np.testing.assert_allclose([float(X[0, 0]) for X in trajectory.values], expected, rtol=1e-10,
                                   atol=1e-14)

    def test_halved_substep_unchanged(self):
        problem = build_transport_problem(TransportParams(8))
        times = [0.0, 0.5, 1.0, 2.0]
        coarse = solve_ndre_direct_exp(problem, times, h_sub=0.05)
        fine = solve_ndre_direct_exp(problem, times, h_sub=0.025)
        for X_coarse, X_fine in zip(coarse.values, fine.values):
            np.testing.assert_allclose(X_coarse, X_fine, rtol=1e-10, atol=1e-13)

    def test_size_cap(self):
        problem = build_transport_problem(TransportParams(30))
        with self.assertRaises(OracleScaleError):
            solve_ndre_direct_exp(problem, [0.0, 1.0], max_dim=40)


class TestMinimalSolution(unittest.TestCase):
    """Fixed-point iteration for the minimal nonnegative NARE solution"""

    def test_scalar(self):
        result = nare_minimal_solution(scalar_problem())
        self.assertTrue(result.converged)
        self.assertTrue(result.monotone)
        self.assertAlmostEqual(float(result.X[0, 0]), 1.0, places=10)

    def test_zero_constant_term(self):
        result = nare_minimal_solution(scalar_problem(q=0.0))
        self.assertEqual(float(result.X[0, 0]), 0.0)
        self.assertEqual(result.iterations, 1)

    def test_transport_agrees_with_newton(self):
        problem = build_transport_problem(TransportParams(8))
        result = nare_minimal_solution(problem)
        self.assertTrue(result.monotone)
        self.assertTrue(np.all(result.X >= 0.0))

        dense = problem.dense_coefficients()
        newton = solve_small_nare_newton(dense['A'], dense['D'], dense['S'], dense['Q'])
        np.testing.assert_allclose(result.X, newton.X, rtol=1e-9, atol=1e-12)

    def test_monotone_in_transport_parameters(self):
        def minimal(c, alpha):
            return nare_minimal_solution(build_transport_problem(TransportParams(8, c, alpha))).X

        for lower, higher in zip((0.3, 0.5), (0.5, 0.7)):
            with self.subTest(c=(lower, higher)):
                self.assertGreaterEqual(float(np.min(minimal(higher, 0.5) - minimal(lower, 0.5))), -1e-12)
        for lower, higher in zip((0.1, 0.5), (0.5, 0.9)):
            with self.subTest(alpha=(lower, higher)):
                self.assertGreaterEqual(float(np.min(minimal(0.5, lower) - minimal(0.5, higher))), -1e-12)

    def test_nonpositive_splitting_shifted(self):
        dense = scalar_problem(q=0.5)
        dense['A'], dense['D'], dense['S'] = np.array([[-0.5]]), np.array([[0.25]]), np.array([[-1.0]])
        result = nare_minimal_solution(dense)
        self.assertTrue(result.converged)
        self.assertGreater(result.shift, 0.0)
        self.assertAlmostEqual(float(result.X[0, 0]), (0.25 + np.sqrt(2.0625)) / 2.0, places=10)

    def test_explicit_shift_keeps_solution(self):
        problem = build_transport_problem(TransportParams(8))
        plain = nare_minimal_solution(problem)
        shifted = nare_minimal_solution(problem, shift=1.0)
        self.assertEqual(plain.shift, 0.0)
        self.assertEqual(shifted.shift, 1.0)
        self.assertTrue(shifted.monotone)
        np.testing.assert_allclose(shifted.X, plain.X, rtol=1e-9, atol=1e-12)

    def test_explicit_shift_too_small(self):
        dense = scalar_problem()
        dense['A'] = np.array([[-3.0]])
        with self.assertRaises(ProblemDefinitionError):
            nare_minimal_solution(dense, shift=0.25)

    def test_no_real_solution_diverges(self):
        dense = scalar_problem()
        dense['A'] = np.array([[-3.0]])
        with np.errstate(over='ignore', invalid='ignore'):
            with self.assertRaises(ConvergenceError):
                nare_minimal_solution(dense, itermax=200)


class TestMonotoneIterates(unittest.TestCase):
    """Fixed-point and Newton iterates from zero climb to the minimal solution"""

    @classmethod
    def setUpClass(cls):
        cls.dense = build_transport_problem(TransportParams(10)).dense_coefficients()
        cls.X_min = nare_minimal_solution(cls.dense).X

    def assert_nondecreasing_below_minimal(self, iterates):
        tolerance = 1e-10 * float(np.max(self.X_min))
        for earlier, later in zip(iterates, iterates[1:]):
            self.assertGreaterEqual(float(np.min(later - earlier)), -tolerance)
        for X in iterates:
            self.assertGreaterEqual(float(np.min(self.X_min - X)), -tolerance)

    def test_fixed_point_iterates(self):
        iterates = [np.zeros_like(self.X_min)]
        for itermax in (1, 2, 4, 8):
            with self.assertRaises(ConvergenceError) as caught:
                nare_minimal_solution(self.dense, itermax=itermax)
            self.assertTrue(caught.exception.diagnostics['monotone'])
            iterates.append(caught.exception.diagnostics['X'])
        result = nare_minimal_solution(self.dense)
        self.assertTrue(result.monotone)
        self.assertGreater(result.iterations, 8)
        self.assert_nondecreasing_below_minimal(iterates + [result.X])

    def test_newton_iterates(self):
        A, D, S, Q = (self.dense[key] for key in ('A', 'D', 'S', 'Q'))
        X = np.zeros_like(self.X_min)
        iterates = [X]
        for _ in range(20):
            try:
                X = solve_small_nare_newton(A, D, S, Q, X_init=X, itermax=1).X
                iterates.append(X)
                break
            except ConvergenceError as e:
                X = e.diagnostics['X']
                iterates.append(X)
        self.assertGreater(len(iterates), 2)
        self.assert_nondecreasing_below_minimal(iterates)
        np.testing.assert_allclose(iterates[-1], self.X_min, rtol=1e-9, atol=1e-12)


class TestProjectedExponential(unittest.TestCase):
    """Exponential of the projected embedding"""

    def test_full_subspace_matches_direct(self):
        problem = build_transport_problem(TransportParams(6))
        rng = np.random.default_rng(1)
        problem = problem.with_initial_value(0.1 * rng.random((6, 1)), 0.1 * rng.random((6, 1)))
        times = [0.0, 0.25, 1.0]
        projected = direct_exp_projected(problem, np.eye(6), np.eye(6), times)
        direct = solve_ndre_direct_exp(problem, times)
        for X_m, X in zip(projected.values, direct.values):
            np.testing.assert_allclose(X_m, X, rtol=1e-8, atol=1e-10)


class TestDenseBdf(unittest.TestCase):
    """Fine-step dense BDF oracle"""

    def test_second_order_matches_direct(self):
        problem = build_transport_problem(TransportParams(8))
        dense_bdf = integrate_dense(problem, h=1e-3, t_f=1.0, order=2, t_grid=[0.5])
        direct = solve_ndre_direct_exp(problem, [0.0, 0.5, 1.0])
        np.testing.assert_allclose(dense_bdf.times, [0.0, 0.5, 1.0])
        for X_bdf, X in zip(dense_bdf.values, direct.values):
            self.assertLess(np.linalg.norm(X_bdf - X), 1e-5 * max(np.linalg.norm(X), 1.0))

    def test_size_cap(self):
        problem = build_transport_problem(TransportParams(40))
        with self.assertRaises(OracleScaleError):
            integrate_dense(problem, max_dim=60)


class TestMonotoneConvergence(unittest.TestCase):
    """Transport flow from X0 = 0 rises towards the minimal solution"""

    def test_monotone_and_approaches_minimal(self):
        problem = build_transport_problem(TransportParams(20))
        times = [0.5, 1.0, 2.0, 5.0, 10.0]
        trajectory = solve_ndre_direct_exp(problem, times)
        values = [trajectory.value_at(t) for t in times]
        for earlier, later in zip(values, values[1:]):
            self.assertGreaterEqual(float(np.min(later - earlier)), -1e-10)

        X_min = nare_minimal_solution(problem).X
        self.assertLess(np.linalg.norm(values[-1] - X_min), np.linalg.norm(values[1] - X_min))


if __name__ == '__main__':
    unittest.main()
