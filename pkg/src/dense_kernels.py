"""
Dense Numerical Kernels
Sylvester solves, matrix exponentials, small NARE Newton and low-rank truncation
"""

import numpy as np
import scipy.linalg as sla
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import DEBUG, TRUNC_TOL

from .exceptions import (ConvergenceError, DimensionError, MatrixExponentialOverflow,
                         ProblemDefinitionError, SingularSylvesterError)
from .operators import low_rank_difference_norm, low_rank_product_norm

logger = logging.getLogger(__name__)

SYLVESTER_SEPARATION_TOL = 1e-13
SYLVESTER_RESIDUAL_TOL = 1e-10


def require_finite(name: str, M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ProblemDefinitionError(f"{name} contains NaN or Inf entries")
    return M


@dataclass
class LowRankFactorPair:
    """X ≈ Z1·Z2ᵀ with Z1 n×r and Z2 p×r"""

    Z1: np.ndarray
    Z2: np.ndarray

    def __post_init__(self):
        if self.Z1.shape[1] != self.Z2.shape[1]:
            raise DimensionError(f"factor ranks differ: {self.Z1.shape[1]} vs {self.Z2.shape[1]}")

    @property
    def rank(self) -> int:
        return self.Z1.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.Z1.shape[0], self.Z2.shape[0])

    def to_dense(self) -> np.ndarray:
        return self.Z1 @ self.Z2.T

    def norm(self) -> float:
        return low_rank_product_norm(self.Z1, self.Z2)

    def distance(self, other: 'LowRankFactorPair') -> float:
        return low_rank_difference_norm(self.Z1, self.Z2, other.Z1, other.Z2)

    @classmethod
    def zeros(cls, n: int, p: int) -> 'LowRankFactorPair':
        return cls(np.zeros((n, 0)), np.zeros((p, 0)))


def solve_sylvester(A: np.ndarray, B: np.ndarray, C: np.ndarray,
                    check: Optional[bool] = None) -> np.ndarray:
    """
    Solve A·X + X·B = C by Schur reduction (Bartels-Stewart)

    Args:
        A: k×k coefficient
        B: l×l coefficient
        C: k×l right-hand side
        check: Verify the residual after the solve (defaults to DEBUG)

    Returns:
        X of shape k×l
    """
    A = require_finite('A', A)
    B = require_finite('B', B)
    C = require_finite('C', C)
    if A.shape[0] != A.shape[1] or B.shape[0] != B.shape[1] or C.shape != (A.shape[0], B.shape[0]):
        raise DimensionError(f"Sylvester shapes incompatible: A {A.shape}, B {B.shape}, C {C.shape}")
    if C.size == 0:
        return np.zeros_like(C)

    scale = np.linalg.norm(A, 2) + np.linalg.norm(B, 2)
    separation = np.min(np.abs(np.add.outer(np.linalg.eigvals(A), np.linalg.eigvals(B))))
    if separation < SYLVESTER_SEPARATION_TOL * max(scale, 1e-300):
        raise SingularSylvesterError(
            f"spectra of A and -B nearly intersect (separation {separation:.3e}, scale {scale:.3e})")

    X = sla.solve_sylvester(A, B, C)
    if not np.all(np.isfinite(X)):
        raise SingularSylvesterError("Sylvester solution is not finite")

    verify = DEBUG if check is None else check
    if verify:
        residual = np.linalg.norm(A @ X + X @ B - C, 'fro')
        bound = SYLVESTER_RESIDUAL_TOL * scale * max(np.linalg.norm(X, 'fro'), 1.0)
        if residual > bound:
            raise SingularSylvesterError(f"Sylvester residual {residual:.3e} exceeds {bound:.3e}")
    return X


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """e^M by scaling and squaring with a diagonal Padé approximant"""
    M = require_finite('M', M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"matrix exponential needs a square matrix, got {M.shape}")
    with np.errstate(over='ignore', invalid='ignore'):
        E = sla.expm(M)
    if not np.all(np.isfinite(E)):
        norm = float(np.linalg.norm(M, 1))
        raise MatrixExponentialOverflow(f"matrix exponential overflowed (‖M‖₁ = {norm:.3e})", norm)
    return E


def nare_residual(A: np.ndarray, D: np.ndarray, S: np.ndarray, Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    """-A·X - X·D + X·S·X + Q"""
    return -A @ X - X @ D + X @ S @ X + Q


@dataclass
class NewtonResult:
    X: np.ndarray
    converged: bool
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)


def solve_small_nare_newton(A: np.ndarray, D: np.ndarray, S: np.ndarray, Q: np.ndarray,
                            X_init: Optional[np.ndarray] = None, tol: float = 1e-12,
                            itermax: int = 50) -> NewtonResult:
    """
    Newton's method for -A·X - X·D + X·S·X + Q = 0

    Each iterate solves (A - X_l·S)·X + X·(D - S·X_l) = Q - X_l·S·X_l and the
    loop stops once ‖X_{l+1} - X_l‖_F / ‖X_l‖_F < tol.

    Raises:
        ConvergenceError: itermax reached, carrying the last residual
    """
    A = require_finite('A', A)
    D = require_finite('D', D)
    S = require_finite('S', S)
    Q = require_finite('Q', Q)
    k, l = Q.shape
    if A.shape != (k, k) or D.shape != (l, l) or S.shape != (l, k):
        raise DimensionError(f"NARE shapes incompatible: A {A.shape}, D {D.shape}, S {S.shape}, Q {Q.shape}")

    X = np.zeros((k, l)) if X_init is None else require_finite('X_init', X_init).copy()
    history = []

    for iteration in range(1, itermax + 1):
        XS = X @ S
        X_next = solve_sylvester(A - XS, D - S @ X, Q - XS @ X)
        change = np.linalg.norm(X_next - X, 'fro')
        base = np.linalg.norm(X, 'fro')
        relative = change / base if base > 0 else (0.0 if change == 0 else np.inf)
        history.append(float(relative))
        X = X_next
        if relative < tol:
            residual = float(np.linalg.norm(nare_residual(A, D, S, Q, X), 'fro'))
            return NewtonResult(X, True, iteration, residual, history)

    residual = float(np.linalg.norm(nare_residual(A, D, S, Q, X), 'fro'))
    raise ConvergenceError(
        f"Newton did not converge in {itermax} iterations (last change {history[-1]:.3e})",
        residual=residual,
        diagnostics={'history': history, 'X': X},
    )


def truncated_svd_factor(Y: np.ndarray, tol_rel: float = TRUNC_TOL,
                         r_max: Optional[int] = None) -> LowRankFactorPair:
    """
    Factor Y ≈ Z1·Z2ᵀ keeping singular values above tol_rel·σ₁

    Z1 = U_r·Σ_r^{1/2} and Z2 = V_r·Σ_r^{1/2}.
    """
    Y = require_finite('Y', Y)
    k, l = Y.shape
    if Y.size == 0:
        return LowRankFactorPair.zeros(k, l)
    U, sigma, Vt = sla.svd(Y, full_matrices=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return LowRankFactorPair.zeros(k, l)
    r = int(np.sum(sigma > tol_rel * sigma[0]))
    if r_max is not None and r > r_max:
        logger.debug(f"truncation rank {r} capped at {r_max}")
        r = r_max
    root = np.sqrt(sigma[:r])
    return LowRankFactorPair(U[:, :r] * root, Vt[:r, :].T * root)


def compress_factors(Z1: np.ndarray, Z2: np.ndarray, tol_rel: float = TRUNC_TOL,
                     r_max: Optional[int] = None) -> LowRankFactorPair:
    """Recompress Z1·Z2ᵀ through thin QR of both factors and an SVD of the core"""
    n, p = Z1.shape[0], Z2.shape[0]
    if Z1.shape[1] == 0:
        return LowRankFactorPair.zeros(n, p)
    Q1, R1 = sla.qr(Z1, mode='economic')
    Q2, R2 = sla.qr(Z2, mode='economic')
    core = truncated_svd_factor(R1 @ R2.T, tol_rel, r_max)
    return LowRankFactorPair(Q1 @ core.Z1, Q2 @ core.Z2)


def bdf_coefficients(order: int) -> Tuple[float, Tuple[float, ...]]:
    """(β, α_0 … α_{s-1}) of the s-step BDF"""
    table: Dict[int, Tuple[float, Tuple[float, ...]]] = {
        1: (1.0, (1.0,)),
        2: (2.0 / 3.0, (4.0 / 3.0, -1.0 / 3.0)),
        3: (6.0 / 11.0, (18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0)),
    }
    if order not in table:
        raise ProblemDefinitionError(f"BDF order must be 1, 2 or 3, got {order}")
    return table[order]
