"""
Reference Oracles
Dense ground truth for verification: the linear-embedding exponential
solution, the minimal NARE solution by fixed point, the projected exponential
approximation and a fine-step dense BDF integrator
"""

import numpy as np
import scipy.linalg as sla
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import ORACLE_MAX_DIM, SUBSTEP_LIMIT

from .dense_kernels import matrix_exponential
from .exceptions import ConditioningError, ConvergenceError, OracleScaleError, ProblemDefinitionError
from .krylov import BlockKrylovState
from .problem import NDREProblem
from .projected_integrators import (ProjectedNDRE, Trajectory, time_grid, davison_maki_trajectory,
                                    solve_projected_bdf)

logger = logging.getLogger(__name__)

ORACLE_COND_LIMIT = 1e10
DENSE_BDF_MAX_DIM = 600


def _dense(problem: Union[NDREProblem, Dict[str, np.ndarray]], max_dim: int) -> Dict[str, np.ndarray]:
    if isinstance(problem, dict):
        return problem
    return problem.dense_coefficients(max_dim)


def embedding_matrix(dense: Dict[str, np.ndarray]) -> np.ndarray:
    """ℋ = [[D, -S], [Q, -A]], p×p block on top"""
    return np.block([[dense['D'], -dense['S']],
                     [dense['Q'], -dense['A']]])


def solve_ndre_direct_exp(problem: Union[NDREProblem, Dict[str, np.ndarray]], t_grid: Sequence[float],
                          h_sub: Optional[float] = None, substep_limit: int = SUBSTEP_LIMIT,
                          max_dim: int = ORACLE_MAX_DIM) -> Trajectory:
    """
    X(t) = Z(t)·Y(t)⁻¹ with [Y; Z] = e^{tℋ}[I; X0]

    The flow is restarted at [I; X] after every substep and a substep is
    halved when cond(Y) exceeds 1e10.

    Args:
        problem: NDRE instance or dict of dense coefficients (A, D, S, Q, X0)
        t_grid: Output times (0 is prepended when missing)
        h_sub: Substep; defaults to min(grid spacing, 1/‖ℋ‖₁)
        max_dim: Largest n + p accepted

    Returns:
        Trajectory of dense n×p values
    """
    dense = _dense(problem, max_dim)
    H = embedding_matrix(dense)
    if H.shape[0] > max_dim:
        raise OracleScaleError(f"embedding of order {H.shape[0]} exceeds the oracle cap {max_dim}")

    times = time_grid(t_grid)
    if h_sub is None:
        spacing = float(np.min(np.diff(times))) if len(times) > 1 else 1.0
        h_norm = float(np.linalg.norm(H, 1))
        h_sub = min(spacing, 1.0 / h_norm) if h_norm > 0 else spacing

    try:
        values, diagnostics = davison_maki_trajectory(H, dense['X0'], times, h_sub, substep_limit,
                                                      cond_limit=ORACLE_COND_LIMIT)
    except ConditioningError as e:
        logger.error(f"Error in direct exponential oracle: {e}")
        raise
    diagnostics['scheme'] = 'direct-exp'
    return Trajectory(times, values, diagnostics)


@dataclass
class FixedPointResult:
    """Outcome of the splitting iteration for the minimal NARE solution"""

    X: np.ndarray
    iterations: int
    converged: bool
    monotone: bool
    increments: List[float] = field(default_factory=list)
    shift: float = 0.0


def splitting_shift(a1: np.ndarray, d1: np.ndarray) -> float:
    """σ ≥ 0 with a_ii + d_jj + 2σ > 0 for all i, j, zero when no shift is needed"""
    lowest = float(np.min(a1) + np.min(d1))
    if lowest > 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(a1))), float(np.max(np.abs(d1))))
    return 0.5 * (abs(lowest) + scale)


def nare_minimal_solution(problem: Union[NDREProblem, Dict[str, np.ndarray]], tol: float = 1e-12,
                          itermax: int = 10000, max_dim: int = ORACLE_MAX_DIM,
                          shift: Optional[float] = None) -> FixedPointResult:
    """
    Minimal nonnegative solution of -AX - XD + XSX + Q = 0 by the diagonal splitting

    With A₁ = diag(A) + σI, A₂ = A₁ - A and likewise for D, the iterate solves
    A₁X + XD₁ = XSX + A₂X + XD₂ + Q, i.e. an entrywise division by a_i + d_j + 2σ.
    σ is zero unless some a_ii + d_jj ≤ 0; pass shift to fix it explicitly.
    Started at X = 0 the iterates are entrywise nondecreasing on M-matrix instances.

    Raises:
        ProblemDefinitionError: an explicit shift leaves a nonpositive denominator
        ConvergenceError: itermax reached before ‖X_{k+1} - X_k‖_F < tol·max(1, ‖X_k‖_F)
    """
    dense = _dense(problem, max_dim)
    A, D, S, Q = dense['A'], dense['D'], dense['S'], dense['Q']
    sigma = splitting_shift(np.diag(A), np.diag(D)) if shift is None else float(shift)
    a1, d1 = np.diag(A) + sigma, np.diag(D) + sigma
    denominator = a1[:, None] + d1[None, :]
    if np.any(denominator <= 0):
        raise ProblemDefinitionError(f"diagonal splitting with shift {sigma:.3g} leaves a_ii + d_jj ≤ 0")
    if sigma:
        logger.info(f"diagonal splitting shifted by {sigma:.3g}")
    A2 = np.diag(a1) - A
    D2 = np.diag(d1) - D

    X = np.zeros_like(Q, dtype=float)
    increments = []
    monotone = True
    for iteration in range(1, itermax + 1):
        X_next = (X @ S @ X + A2 @ X + X @ D2 + Q) / denominator
        step = X_next - X
        if np.min(step) < -1e-12 * max(1.0, float(np.max(np.abs(X_next)))):
            monotone = False
        change = float(np.linalg.norm(step, 'fro'))
        increments.append(change)
        X = X_next
        if not np.all(np.isfinite(X)):
            raise ConvergenceError(f"fixed point diverged at iteration {iteration}",
                                   residual=np.inf, diagnostics={'increments': increments})
        if change < tol * max(1.0, float(np.linalg.norm(X, 'fro'))):
            logger.debug(f"minimal solution after {iteration} fixed-point iterations")
            return FixedPointResult(X, iteration, True, monotone, increments, sigma)

    raise ConvergenceError(
        f"fixed point did not converge in {itermax} iterations (last increment {increments[-1]:.3e})",
        residual=increments[-1], diagnostics={'increments': increments, 'X': X, 'monotone': monotone})


def projected_embedding(dense: Dict[str, np.ndarray], V: np.ndarray, W: np.ndarray) -> np.ndarray:
    """ℋ_m = 𝒰ᵀℋ𝒰 with 𝒰 = blkdiag(𝒲, 𝒱)"""
    return np.block([[W.T @ dense['D'] @ W, -W.T @ dense['S'] @ V],
                     [V.T @ dense['Q'] @ W, -V.T @ dense['A'] @ V]])


def direct_exp_projected(problem: Union[NDREProblem, Dict[str, np.ndarray]],
                         stateA: Union[BlockKrylovState, np.ndarray],
                         stateD: Union[BlockKrylovState, np.ndarray], t_grid: Sequence[float],
                         substep_limit: int = SUBSTEP_LIMIT, rank_tol: float = 1e-10,
                         max_dim: int = ORACLE_MAX_DIM) -> Trajectory:
    """
    X̃_m(t) = X_{1,m}·X_{2,m}⁺ from 𝒰·e^{tℋ_m}·𝒰ᵀ[I; X0]

    The first substep starts from Γ = [𝒲ᵀ; 𝒱ᵀX0] and the quotient uses the
    pseudo-inverse of the l×p top block; later substeps restart at [I; U₂U₁⁺].

    Raises:
        ConditioningError: the top block loses row rank
    """
    dense = _dense(problem, max_dim)
    V = stateA.basis if isinstance(stateA, BlockKrylovState) else np.asarray(stateA)
    W = stateD.basis if isinstance(stateD, BlockKrylovState) else np.asarray(stateD)
    k, l = V.shape[1], W.shape[1]
    H_m = projected_embedding(dense, V, W)
    times = time_grid(t_grid)

    h_norm = float(np.linalg.norm(H_m, 1))
    h_sub = min(1.0 / h_norm, float(times[-1])) if h_norm > 0 and times[-1] > 0 else max(float(times[-1]), 1.0)

    # first substep carries the full p columns of Γ
    Gamma = np.vstack([W.T, V.T @ dense['X0']])
    t_first = min(h_sub, float(times[-1]))
    U = matrix_exponential(t_first * H_m) @ Gamma
    U1, U2 = U[:l], U[l:]
    if l:
        singular = sla.svdvals(U1)
        if singular[-1] <= rank_tol * max(1.0, singular[0]):
            raise ConditioningError(f"projected quotient block is rank deficient "
                                    f"(σ_min {singular[-1]:.3e}) at t={t_first:.6g}")
    Y_first = U2 @ np.linalg.pinv(U1)
    Y0 = (V.T @ dense['X0'] @ W) if l else np.zeros((k, 0))

    values = []
    later = [t for t in times if t > t_first]
    for t in times:
        if t == 0.0:
            values.append(Y0)
        elif t < t_first:
            U = matrix_exponential(t * H_m) @ Gamma
            values.append(U[l:] @ np.linalg.pinv(U[:l]))
        elif t == t_first:
            values.append(Y_first)
    if later:
        rest, diagnostics = davison_maki_trajectory(H_m, Y_first, np.array([t_first] + later),
                                                    h_sub, substep_limit)
        values.extend(rest[1:])
    else:
        diagnostics = {'substeps': 1, 'halvings': 0}

    diagnostics.update({'scheme': 'direct-exp-projected', 'k': k, 'l': l})
    return Trajectory(times, [V @ Y @ W.T for Y in values], diagnostics)


def integrate_dense(problem: Union[NDREProblem, Dict[str, np.ndarray]], h: float = 1e-3,
                    t_f: float = 1.0, order: int = 1, t_grid: Optional[Sequence[float]] = None,
                    newton_tol: float = 1e-12, newton_itermax: int = 50,
                    max_dim: int = DENSE_BDF_MAX_DIM) -> Trajectory:
    """Fine-step dense BDF(order) with a dense Newton solve per step"""
    if not isinstance(problem, dict) and problem.n + problem.p > max_dim:
        raise OracleScaleError(f"n + p = {problem.n + problem.p} exceeds the dense integrator cap {max_dim}")
    dense = _dense(problem, max_dim)
    if isinstance(problem, dict):
        F, G = dense['Q'], np.eye(dense['Q'].shape[1])
    else:
        F, G = problem.F, problem.G
    proj = ProjectedNDRE(T_A=dense['A'], T_D=dense['D'], S_m=dense['S'], F_m=F, G_m=G, Y0=dense['X0'])
    try:
        trajectory = solve_projected_bdf(proj, order, h, t_f, newton_tol, newton_itermax, t_grid)
    except ConvergenceError as e:
        logger.error(f"Error in dense BDF{order} oracle: {e}")
        raise
    trajectory.diagnostics['scheme'] = f'dense-bdf{order}'
    return trajectory
