"""
Unit tests for the block Krylov bases
"""

import unittest
import sys
import os
import numpy as np

# Add src directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.exceptions import DimensionError, SingularOperatorError
from src.krylov import (block_arnoldi_init, block_arnoldi_step, eba_init, eba_step, extend_orthonormal,
                        krylov_step, projected_matrices)
from src.operators import DenseOperator
from src.problem import NDREProblem, TransportParams, build_transport_problem


def arnoldi_relation_error(state, A):
    """‖A·𝒱_m - 𝒱_{m+1}·T̄_m‖_F"""
    V = state.basis
    return np.linalg.norm(A @ V - state.full_basis @ state.T_bar, 'fro')


class TestExtendedBlockArnoldi(unittest.TestCase):
    """Extended block Arnoldi process"""

    def setUp(self):
        rng = np.random.default_rng(0)
        self.n = 60
        self.A = rng.standard_normal((self.n, self.n)) / np.sqrt(self.n) + 3.0 * np.eye(self.n)
        self.V = rng.standard_normal((self.n, 2))

    def test_orthonormal_basis(self):
        state = eba_init(DenseOperator(self.A), self.V)
        for _ in range(5):
            eba_step(state)
        self.assertEqual(state.m, 5)
        self.assertEqual(state.dim(), 20)
        self.assertLess(state.orthonormality_error(), 1e-10)

    def test_arnoldi_relation(self):
        state = eba_init(DenseOperator(self.A), self.V)
        for _ in range(6):
            eba_step(state)
        self.assertLess(arnoldi_relation_error(state, self.A), 1e-8 * np.linalg.norm(self.A, 2))

    def test_block_hessenberg_shape(self):
        state = eba_init(DenseOperator(self.A), self.V)
        for _ in range(4):
            eba_step(state)
        T = state.T_bar
        # nothing below the first block subdiagonal
        self.assertLess(np.max(np.abs(T[12:, :4])), 1e-10)

    def test_start_contains_inverse_direction(self):
        state = eba_init(DenseOperator(self.A), self.V)
        V1 = state.blocks[0]
        target = np.linalg.solve(self.A, self.V)
        self.assertLess(np.linalg.norm(target - V1 @ (V1.T @ target)), 1e-10 * np.linalg.norm(target))
        np.testing.assert_allclose(V1 @ state.start_coords, self.V, atol=1e-10)

    def test_transport_start_block(self):
        problem = build_transport_problem(TransportParams(100))
        state = eba_init(problem.A, problem.F)
        V1 = state.blocks[0]
        self.assertEqual(V1.shape, (100, 2))
        np.testing.assert_allclose(V1.T @ V1, np.eye(2), atol=1e-12)

    def test_singular_operator_raises(self):
        A = np.diag([1.0, 2.0, 0.0])
        with self.assertRaises(SingularOperatorError):
            eba_init(DenseOperator(A), np.ones(3))

    def test_wrong_start_rows(self):
        with self.assertRaises(DimensionError):
            eba_init(DenseOperator(self.A), np.ones(5))


class TestBlockArnoldi(unittest.TestCase):
    """Block Arnoldi process, deflation and breakdown"""

    def test_arnoldi_relation(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((40, 40))
        state = block_arnoldi_init(DenseOperator(A), rng.standard_normal((40, 3)))
        for _ in range(5):
            block_arnoldi_step(state)
        self.assertLess(state.orthonormality_error(), 1e-10)
        self.assertLess(arnoldi_relation_error(state, A), 1e-8 * np.linalg.norm(A, 2))

    def test_duplicate_columns_deflate(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal(20)
        state = block_arnoldi_init(DenseOperator(np.eye(20) + np.diag(np.arange(20.0))),
                                   np.column_stack([v, v]))
        self.assertEqual(state.blocks[0].shape[1], 1)
        self.assertEqual(state.deflation_log, [(0, 1)])

    def test_invariant_subspace_breakdown(self):
        A = np.diag([1.0, 2.0, 3.0])
        e1 = np.array([1.0, 0.0, 0.0])

        state = block_arnoldi_init(DenseOperator(A), e1)
        krylov_step(state)
        self.assertTrue(state.breakdown)
        self.assertEqual(state.dim(), 1)
        np.testing.assert_allclose(state.T_m, [[1.0]])

        extended = eba_init(DenseOperator(A), e1)
        self.assertEqual(extended.blocks[0].shape[1], 1)
        krylov_step(extended)
        self.assertTrue(extended.breakdown)

        # further steps leave the state alone
        krylov_step(state)
        self.assertEqual(state.dim(), 1)

    def test_extend_orthonormal_keeps_group_order(self):
        rng = np.random.default_rng(3)
        base, _ = np.linalg.qr(rng.standard_normal((15, 2)))
        first = rng.standard_normal((15, 2))
        second = base @ rng.standard_normal((2, 1))
        block, kept, dropped = extend_orthonormal([base], [first, second])
        self.assertEqual(kept, [2, 0])
        self.assertEqual(dropped, 1)
        self.assertLess(np.linalg.norm(base.T @ block), 1e-12)


class TestTruncate(unittest.TestCase):
    """Rolling a state back to an earlier step"""

    def test_matches_shorter_run(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((30, 30)) / 5.0 + 2.0 * np.eye(30)
        V = rng.standard_normal((30, 2))
        for init in (block_arnoldi_init, eba_init):
            with self.subTest(init=init.__name__):
                long, short = init(DenseOperator(A), V), init(DenseOperator(A), V)
                for _ in range(4):
                    krylov_step(long)
                for _ in range(2):
                    krylov_step(short)
                self.assertEqual(long.basis.shape[1], long.dim())
                long.truncate(2)
                self.assertEqual(long.m, 2)
                self.assertEqual(long.dim(), short.dim())
                np.testing.assert_array_equal(long.T_bar, short.T_bar)
                np.testing.assert_array_equal(long.basis, short.basis)
                np.testing.assert_array_equal(long.T_next, short.T_next)

    def test_out_of_range(self):
        state = block_arnoldi_init(DenseOperator(np.eye(5) + np.diag(np.arange(5.0))), np.ones(5))
        krylov_step(state)
        with self.assertRaises(DimensionError):
            state.truncate(3)


class TestSymmetricOperator(unittest.TestCase):
    """A symmetric operator projects to a block-tridiagonal matrix"""

    def test_block_tridiagonal(self):
        rng = np.random.default_rng(6)
        M = rng.standard_normal((50, 50))
        A = (M + M.T) / 10.0 + 4.0 * np.eye(50)
        V = rng.standard_normal((50, 2))
        for init in (block_arnoldi_init, eba_init):
            with self.subTest(init=init.__name__):
                state = init(DenseOperator(A), V)
                for _ in range(5):
                    krylov_step(state)
                T = state.T_m
                offsets = np.cumsum([0] + state.widths[:state.m])
                for i in range(state.m):
                    for j in range(i + 2, state.m):
                        block = T[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]]
                        self.assertLess(np.max(np.abs(block)), 1e-10 * np.linalg.norm(A, 2))
                np.testing.assert_allclose(T, T.T, atol=1e-10 * np.linalg.norm(A, 2))


class TestProjectedMatrices(unittest.TestCase):
    """Galerkin projection of the NDRE coefficients"""

    def test_matches_dense_projection(self):
        rng = np.random.default_rng(4)
        n, p = 14, 10
        A = rng.standard_normal((n, n)) / 4.0 + 3.0 * np.eye(n)
        D = rng.standard_normal((p, p)) / 4.0 + 2.0 * np.eye(p)
        S = rng.random((p, n)) / 10.0
        F = rng.random((n, 1))
        G = rng.random((p, 1))
        problem = NDREProblem(A, D, S, F, G)

        stateA = eba_init(problem.A, problem.F)
        stateD = eba_init(problem.D.T, problem.G)
        for _ in range(2):
            krylov_step(stateA)
            krylov_step(stateD)
        proj = projected_matrices(stateA, stateD, problem)

        V, W = stateA.basis, stateD.basis
        np.testing.assert_allclose(proj.T_A, V.T @ A @ V, atol=1e-10)
        np.testing.assert_allclose(proj.T_D, W.T @ D @ W, atol=1e-10)
        np.testing.assert_allclose(proj.S_m, W.T @ S @ V, atol=1e-12)
        np.testing.assert_allclose(proj.Q, V.T @ F @ G.T @ W, atol=1e-12)
        np.testing.assert_allclose(proj.Y0, np.zeros((V.shape[1], W.shape[1])))

    def test_size_mismatch(self):
        problem = build_transport_problem(TransportParams(8))
        other = build_transport_problem(TransportParams(6))
        stateA = eba_init(other.A, other.F)
        stateD = eba_init(problem.D.T, problem.G)
        krylov_step(stateA)
        krylov_step(stateD)
        with self.assertRaises(DimensionError):
            projected_matrices(stateA, stateD, problem)


if __name__ == '__main__':
    unittest.main()
