"""
Structured Linear Operators
Forward, transpose and inverse applications for the NDRE coefficient matrices
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from typing import Optional, Tuple
import logging

from .exceptions import DimensionError, OracleScaleError, SingularOperatorError

logger = logging.getLogger(__name__)

DENSE_SIZE_CAP = 4000
CAPACITANCE_COND_LIMIT = 1e14


def _as_block(x) -> Tuple[np.ndarray, bool]:
    """Return x as a 2-D block plus a flag telling whether it was a vector"""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr.reshape(-1, 1), True
    return arr, False


def _restore(y: np.ndarray, vector: bool) -> np.ndarray:
    return y[:, 0] if vector else y


class StructuredOperator:
    """Square operator with forward, transpose and inverse applications"""

    structure = 'abstract'

    def __init__(self, n: int):
        self.n = int(n)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n, self.n)

    def _check(self, block: np.ndarray):
        if block.shape[0] != self.n:
            raise DimensionError(
                f"{self.structure} operator of size {self.n} applied to {block.shape[0]} rows")

    def _dispatch(self, x, kernel) -> np.ndarray:
        block, vector = _as_block(x)
        self._check(block)
        if block.shape[1] == 0:
            return _restore(np.zeros((self.n, 0)), vector)
        return _restore(kernel(block), vector)

    def apply(self, x) -> np.ndarray:
        return self._dispatch(x, self._matmat)

    def apply_transpose(self, x) -> np.ndarray:
        return self._dispatch(x, self._rmatmat)

    def apply_inverse(self, x) -> np.ndarray:
        return self._dispatch(x, self._solve)

    def apply_inverse_transpose(self, x) -> np.ndarray:
        return self._dispatch(x, self._solve_transpose)

    def to_dense(self, max_dim: int = DENSE_SIZE_CAP) -> np.ndarray:
        if self.n > max_dim:
            raise OracleScaleError(f"refusing to densify a {self.n}x{self.n} operator (cap {max_dim})")
        return self._matmat(np.eye(self.n))

    @property
    def T(self) -> 'StructuredOperator':
        return TransposedOperator(self)

    def shifted(self, scale: float, shift: float) -> 'StructuredOperator':
        raise NotImplementedError

    def _matmat(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _rmatmat(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _solve(self, X: np.ndarray) -> np.ndarray:
        raise SingularOperatorError(f"{self.structure} operator has no inverse application")

    def _solve_transpose(self, X: np.ndarray) -> np.ndarray:
        raise SingularOperatorError(f"{self.structure} operator has no inverse application")


class DenseOperator(StructuredOperator):
    """Dense matrix with a cached LU factorization"""

    structure = 'dense'

    def __init__(self, matrix):
        M = np.asarray(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError(f"dense operator must be square, got shape {M.shape}")
        super().__init__(M.shape[0])
        self.matrix = M
        self._lu = None

    def _factor(self):
        if self._lu is None:
            lu, piv = sla.lu_factor(self.matrix, check_finite=True)
            pivots = np.abs(np.diag(lu))
            if pivots.size and pivots.min() <= np.finfo(float).eps * self.n * max(pivots.max(), 1e-300):
                raise SingularOperatorError("dense operator is numerically singular")
            self._lu = (lu, piv)
        return self._lu

    def _matmat(self, X):
        return self.matrix @ X

    def _rmatmat(self, X):
        return self.matrix.T @ X

    def _solve(self, X):
        return sla.lu_solve(self._factor(), X)

    def _solve_transpose(self, X):
        return sla.lu_solve(self._factor(), X, trans=1)

    def to_dense(self, max_dim: int = DENSE_SIZE_CAP) -> np.ndarray:
        if self.n > max_dim:
            raise OracleScaleError(f"refusing to densify a {self.n}x{self.n} operator (cap {max_dim})")
        return self.matrix.copy()

    def shifted(self, scale: float, shift: float) -> 'DenseOperator':
        return DenseOperator(scale * self.matrix + shift * np.eye(self.n))


class SparseOperator(StructuredOperator):
    """Sparse matrix with a cached sparse LU factorization"""

    structure = 'sparse'

    def __init__(self, matrix):
        M = sp.csc_matrix(matrix, dtype=float)
        if M.shape[0] != M.shape[1]:
            raise DimensionError(f"sparse operator must be square, got shape {M.shape}")
        super().__init__(M.shape[0])
        self.matrix = M
        self._lu = None

    def _factor(self):
        if self._lu is None:
            try:
                lu = spla.splu(self.matrix)
            except RuntimeError as e:
                raise SingularOperatorError(f"sparse LU failed: {e}")
            pivots = np.abs(lu.U.diagonal())
            if pivots.size and pivots.min() <= np.finfo(float).eps * self.n * max(pivots.max(), 1e-300):
                raise SingularOperatorError("sparse operator is numerically singular")
            self._lu = lu
        return self._lu

    def _matmat(self, X):
        return np.asarray(self.matrix @ X)

    def _rmatmat(self, X):
        return np.asarray(self.matrix.T @ X)

    def _solve(self, X):
        return self._factor().solve(np.ascontiguousarray(X))

    def _solve_transpose(self, X):
        return self._factor().solve(np.ascontiguousarray(X), trans='T')

    def to_dense(self, max_dim: int = DENSE_SIZE_CAP) -> np.ndarray:
        if self.n > max_dim:
            raise OracleScaleError(f"refusing to densify a {self.n}x{self.n} operator (cap {max_dim})")
        return self.matrix.toarray()

    def shifted(self, scale: float, shift: float) -> 'SparseOperator':
        return SparseOperator(scale * self.matrix + shift * sp.identity(self.n, format='csc'))


def sherman_morrison_vanishes(denominator: float, d: np.ndarray) -> bool:
    """1 - vᵀ·diag(d)⁻¹·u counts as zero below 1e-14 on the scale of ‖d‖∞"""
    return abs(denominator) < 1e-14 * max(1.0, float(np.max(np.abs(d))))


class DiagPlusLowRank(StructuredOperator):
    """
    M = diag(d) - U·Vᵀ with a Sherman-Morrison-Woodbury inverse

    Only the k×k capacitance matrix I - Vᵀ·diag(d)⁻¹·U is ever factored,
    so every application costs O(n·k) per column.
    """

    structure = 'diag-plus-low-rank'

    def __init__(self, d, U, V):
        d = np.asarray(d, dtype=float).ravel()
        U, _ = _as_block(U)
        V, _ = _as_block(V)
        n = d.size
        if U.shape != V.shape or U.shape[0] != n:
            raise DimensionError(f"factor shapes {U.shape}, {V.shape} do not match diagonal of size {n}")
        super().__init__(n)
        self.d = d
        self.U = U
        self.V = V
        if np.any(d == 0.0):
            raise SingularOperatorError("diagonal part has zero entries; Woodbury inverse unavailable")
        self._dinv_U = U / d[:, None]
        self._dinv_V = V / d[:, None]
        self.capacitance = np.eye(U.shape[1]) - V.T @ self._dinv_U
        self._check_capacitance()
        self._cap_lu = sla.lu_factor(self.capacitance) if U.shape[1] else None

    def _check_capacitance(self):
        k = self.capacitance.shape[0]
        if k == 0:
            return
        if np.linalg.cond(self.capacitance) > CAPACITANCE_COND_LIMIT:
            raise SingularOperatorError(
                f"Woodbury capacitance matrix is singular (cond > {CAPACITANCE_COND_LIMIT:.0e})")

    def _matmat(self, X):
        return self.d[:, None] * X - self.U @ (self.V.T @ X)

    def _rmatmat(self, X):
        return self.d[:, None] * X - self.V @ (self.U.T @ X)

    def _solve(self, X):
        Y = X / self.d[:, None]
        if self._cap_lu is None:
            return Y
        return Y + self._dinv_U @ sla.lu_solve(self._cap_lu, self.V.T @ Y)

    def _solve_transpose(self, X):
        Y = X / self.d[:, None]
        if self._cap_lu is None:
            return Y
        return Y + self._dinv_V @ sla.lu_solve(self._cap_lu, self.U.T @ Y, trans=1)

    def shifted(self, scale: float, shift: float) -> 'DiagPlusLowRank':
        return DiagPlusLowRank(scale * self.d + shift, scale * self.U, self.V)


class DiagPlusRankOne(DiagPlusLowRank):
    """M = diag(d) - u·vᵀ; the transport coefficient matrices Δ - e·qᵀ and Γ - q·eᵀ"""

    def __init__(self, d, u, v):
        u = np.asarray(u, dtype=float).ravel()
        v = np.asarray(v, dtype=float).ravel()
        super().__init__(d, u.reshape(-1, 1), v.reshape(-1, 1))

    @property
    def u(self) -> np.ndarray:
        return self.U[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.V[:, 0]

    @property
    def denominator(self) -> float:
        """1 - vᵀ·diag(d)⁻¹·u"""
        return float(self.capacitance[0, 0])

    def _check_capacitance(self):
        projected = float(self.V[:, 0] @ self._dinv_U[:, 0])
        if sherman_morrison_vanishes(1.0 - projected, self.d):
            raise SingularOperatorError(
                f"Sherman-Morrison denominator vanishes (1 - vᵀD⁻¹u = {1.0 - projected:.3e})")


class ShiftedOperator(StructuredOperator):
    """
    scale·M + shift·I - U·Vᵀ for a structured base operator M

    The inverse reuses the base operator's shifted inverse and corrects it
    with the Woodbury identity; the correction has the rank of U.
    """

    structure = 'shifted'

    def __init__(self, base: StructuredOperator, scale: float = 1.0, shift: float = 0.0,
                 U: Optional[np.ndarray] = None, V: Optional[np.ndarray] = None):
        super().__init__(base.n)
        self.base = base
        self.scale = float(scale)
        self.shift = float(shift)
        if U is None or V is None:
            U = np.zeros((base.n, 0))
            V = np.zeros((base.n, 0))
        U, _ = _as_block(U)
        V, _ = _as_block(V)
        if U.shape != V.shape or U.shape[0] != base.n:
            raise DimensionError(f"low-rank correction shapes {U.shape}, {V.shape} do not match size {base.n}")
        self.U = U
        self.V = V
        if self.scale == 1.0 and self.shift == 0.0:
            self.core = base
        else:
            self.core = base.shifted(self.scale, self.shift)
        self._woodbury = None
        self._woodbury_t = None

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def _matmat(self, X):
        return self.core.apply(X) - self.U @ (self.V.T @ X)

    def _rmatmat(self, X):
        return self.core.apply_transpose(X) - self.V @ (self.U.T @ X)

    def _forward_factors(self):
        if self._woodbury is None:
            Z = self.core.apply_inverse(self.U)
            C = np.eye(self.rank) - self.V.T @ Z
            if np.linalg.cond(C) > CAPACITANCE_COND_LIMIT:
                raise SingularOperatorError("shifted operator: Woodbury capacitance is singular")
            self._woodbury = (Z, sla.lu_factor(C))
        return self._woodbury

    def _transpose_factors(self):
        if self._woodbury_t is None:
            Z = self.core.apply_inverse_transpose(self.V)
            C = np.eye(self.rank) - self.U.T @ Z
            if np.linalg.cond(C) > CAPACITANCE_COND_LIMIT:
                raise SingularOperatorError("shifted operator: Woodbury capacitance is singular")
            self._woodbury_t = (Z, sla.lu_factor(C))
        return self._woodbury_t

    def _solve(self, X):
        Y = self.core.apply_inverse(X)
        if self.rank == 0:
            return Y
        Z, cap = self._forward_factors()
        return Y + Z @ sla.lu_solve(cap, self.V.T @ Y)

    def _solve_transpose(self, X):
        Y = self.core.apply_inverse_transpose(X)
        if self.rank == 0:
            return Y
        Z, cap = self._transpose_factors()
        return Y + Z @ sla.lu_solve(cap, self.U.T @ Y)

    def shifted(self, scale: float, shift: float) -> 'ShiftedOperator':
        return ShiftedOperator(self.base, scale * self.scale, scale * self.shift + shift,
                               scale * self.U, self.V)


class TransposedOperator(StructuredOperator):
    """Transposed view: apply and apply_transpose swap roles"""

    def __init__(self, op: StructuredOperator):
        super().__init__(op.n)
        self.op = op
        self.structure = op.structure

    def _matmat(self, X):
        return self.op.apply_transpose(X)

    def _rmatmat(self, X):
        return self.op.apply(X)

    def _solve(self, X):
        return self.op.apply_inverse_transpose(X)

    def _solve_transpose(self, X):
        return self.op.apply_inverse(X)

    @property
    def T(self) -> StructuredOperator:
        return self.op

    def shifted(self, scale: float, shift: float) -> 'TransposedOperator':
        return TransposedOperator(self.op.shifted(scale, shift))


class CouplingTerm:
    """The p×n quadratic coefficient S, held as low-rank factors L·Rᵀ or as a matrix"""

    def __init__(self, shape: Tuple[int, int], left: Optional[np.ndarray] = None,
                 right: Optional[np.ndarray] = None, matrix=None):
        self.shape = (int(shape[0]), int(shape[1]))
        self.left = left
        self.right = right
        self.matrix = matrix

    @classmethod
    def from_factors(cls, left, right) -> 'CouplingTerm':
        L, _ = _as_block(left)
        R, _ = _as_block(right)
        if L.shape[1] != R.shape[1]:
            raise DimensionError(f"coupling factors have ranks {L.shape[1]} and {R.shape[1]}")
        return cls((L.shape[0], R.shape[0]), left=L, right=R)

    @classmethod
    def from_matrix(cls, matrix) -> 'CouplingTerm':
        M = sp.csr_matrix(matrix, dtype=float) if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        if M.ndim != 2:
            raise DimensionError("coupling matrix must be 2-D")
        return cls(M.shape, matrix=M)

    @property
    def is_low_rank(self) -> bool:
        return self.left is not None

    def rank_factors(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        return (self.left, self.right) if self.is_low_rank else None

    def apply(self, X) -> np.ndarray:
        """S·X for an n×k block"""
        block, vector = _as_block(X)
        if block.shape[0] != self.shape[1]:
            raise DimensionError(f"S is {self.shape}, cannot multiply {block.shape[0]} rows")
        if self.is_low_rank:
            out = self.left @ (self.right.T @ block)
        else:
            out = np.asarray(self.matrix @ block)
        return _restore(out, vector)

    def apply_transpose(self, Y) -> np.ndarray:
        """Sᵀ·Y for a p×k block"""
        block, vector = _as_block(Y)
        if block.shape[0] != self.shape[0]:
            raise DimensionError(f"Sᵀ is {self.shape[::-1]}, cannot multiply {block.shape[0]} rows")
        if self.is_low_rank:
            out = self.right @ (self.left.T @ block)
        else:
            out = np.asarray(self.matrix.T @ block)
        return _restore(out, vector)

    def to_dense(self, max_dim: int = DENSE_SIZE_CAP) -> np.ndarray:
        if max(self.shape) > max_dim:
            raise OracleScaleError(f"refusing to densify S of shape {self.shape} (cap {max_dim})")
        if self.is_low_rank:
            return self.left @ self.right.T
        if sp.issparse(self.matrix):
            return self.matrix.toarray()
        return np.array(self.matrix)

    def norm2(self) -> float:
        """Spectral norm of S"""
        if self.is_low_rank:
            if self.left.shape[1] == 0:
                return 0.0
            _, r_left = np.linalg.qr(self.left)
            _, r_right = np.linalg.qr(self.right)
            return float(np.linalg.norm(r_left @ r_right.T, 2))
        if sp.issparse(self.matrix):
            if min(self.shape) <= 2 or self.matrix.nnz == 0:
                return float(np.linalg.norm(self.matrix.toarray(), 2)) if self.matrix.nnz else 0.0
            return float(spla.svds(self.matrix, k=1, return_singular_vectors=False)[0])
        return float(np.linalg.norm(self.matrix, 2))


def low_rank_triangular_factors(Z1: np.ndarray, Z2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """R1, R2 with Z1 = Q1·R1 and Z2 = Q2·R2, so Z1·Z2ᵀ and R1·R2ᵀ share every unitarily invariant norm"""
    return np.linalg.qr(Z1, mode='r'), np.linalg.qr(Z2, mode='r')


def low_rank_product_norm(Z1: np.ndarray, Z2: np.ndarray, ord='fro') -> float:
    """‖Z1·Z2ᵀ‖ through the triangular QR factors, never forming the product"""
    if Z1.shape[1] == 0:
        return 0.0
    R1, R2 = low_rank_triangular_factors(Z1, Z2)
    return float(np.linalg.norm(R1 @ R2.T, ord))


def low_rank_difference_norm(Z1: np.ndarray, Z2: np.ndarray,
                             W1: np.ndarray, W2: np.ndarray) -> float:
    """‖Z1·Z2ᵀ - W1·W2ᵀ‖_F through stacked factors"""
    return low_rank_product_norm(np.hstack([Z1, W1]), np.hstack([Z2, -W2]))
