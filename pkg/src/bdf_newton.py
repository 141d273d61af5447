"""
Full-scale BDF-Newton Solver
BDF(s) on the original NDRE with a Newton solve of each step's NARE and
block-Krylov Sylvester solves, all iterates held as low-rank factors
"""

import numpy as np
import time
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import (DEFLATION_TOL, INNER_MAXIT, INNER_TOL, NEWTON_MAXIT, NEWTON_TOL, R_MAX,
                    TRUNC_TOL)

from .dense_kernels import (LowRankFactorPair, bdf_coefficients, compress_factors,
                            solve_sylvester, truncated_svd_factor)
from .eba_driver import LowRankSolution, SolveReport, residual_norm
from .exceptions import ConfigError, ConvergenceError
from .krylov import block_arnoldi_init, eba_init, krylov_step
from .operators import (CouplingTerm, ShiftedOperator, StructuredOperator, low_rank_product_norm,
                        low_rank_triangular_factors)
from .problem import NDREProblem
from .projected_integrators import stored_steps, uniform_steps

logger = logging.getLogger(__name__)


@dataclass
class BDFNewtonOptions:
    """Settings of the full-scale BDF-Newton solver"""

    t_grid: Optional[Sequence[float]] = None
    newton_tol: float = NEWTON_TOL
    newton_maxit: int = NEWTON_MAXIT
    inner_tol: float = INNER_TOL
    inner_maxit: int = INNER_MAXIT
    r_max: int = R_MAX
    trunc_tol: float = TRUNC_TOL
    krylov: str = 'block'
    deflation_tol: float = DEFLATION_TOL

    def __post_init__(self):
        if self.krylov not in ('eba', 'block'):
            raise ConfigError("krylov must be 'eba' or 'block'", field='krylov')
        for name in ('newton_maxit', 'inner_maxit', 'r_max'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer", field=name)
        if not 0 < self.inner_tol <= 0.1 * self.newton_tol:
            raise ConfigError(f"inner_tol {self.inner_tol:.1e} must lie below newton_tol/10 "
                              f"({self.newton_tol:.1e})", field='inner_tol')


class FactoredHistory:
    """The last s iterates (Z_{k,1}, Z_{k,2}) with their times, most recent first"""

    def __init__(self, order: int):
        self.order = order
        self._entries: Deque[Tuple[float, LowRankFactorPair]] = deque(maxlen=order)

    def push(self, t: float, pair: LowRankFactorPair):
        self._entries.appendleft((t, pair))

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, i: int) -> LowRankFactorPair:
        return self._entries[i][1]

    @property
    def latest(self) -> LowRankFactorPair:
        return self._entries[0][1]

    @property
    def times(self) -> List[float]:
        return [t for t, _ in self._entries]


def build_bdf_rhs_factors(history: FactoredHistory, F: np.ndarray, G: np.ndarray, h: float,
                          beta: float, alphas: Sequence[float], r_max: Optional[int] = None,
                          trunc_tol: float = TRUNC_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """
    F̃·G̃ᵀ = hβ·F·Gᵀ + Σ α_i·Z_{k-i,1}·Z_{k-i,2}ᵀ

    √|α_i| goes on both sides and sign(α_i) on the G̃ side only.
    """
    if len(history) < len(alphas):
        raise ConfigError(f"BDF{len(alphas)} needs {len(alphas)} history entries, have {len(history)}")
    root = np.sqrt(h * beta)
    left = [root * F]
    right = [root * G]
    for i, alpha in enumerate(alphas):
        pair = history[i]
        if pair.rank == 0 or alpha == 0.0:
            continue
        weight = np.sqrt(abs(alpha))
        left.append(weight * pair.Z1)
        right.append(np.sign(alpha) * weight * pair.Z2)

    F_tilde = np.hstack(left)
    G_tilde = np.hstack(right)
    if r_max is not None and F_tilde.shape[1] > r_max:
        compressed = compress_factors(F_tilde, G_tilde, trunc_tol, r_max)
        logger.debug(f"BDF right-hand side compressed from rank {F_tilde.shape[1]} to {compressed.rank}")
        return compressed.Z1, compressed.Z2
    return F_tilde, G_tilde


def sylvester_low_rank_krylov(A_op: StructuredOperator, D_op: StructuredOperator, F: np.ndarray,
                              G: np.ndarray, tol: float = INNER_TOL, itermax: int = INNER_MAXIT,
                              krylov: str = 'block', trunc_tol: float = TRUNC_TOL,
                              deflation_tol: float = DEFLATION_TOL) -> LowRankFactorPair:
    """
    Galerkin solution of A·X + X·D + F·Gᵀ = 0 on block Krylov spaces of (A, F) and (Dᵀ, G)

    The residual is monitored through the last Krylov blocks, relative to ‖F·Gᵀ‖_F.

    Raises:
        ConvergenceError: tolerance not met within itermax steps
    """
    n, p = A_op.n, D_op.n
    rhs_norm = low_rank_product_norm(F, G)
    if rhs_norm == 0.0:
        return LowRankFactorPair.zeros(n, p)

    init = eba_init if krylov == 'eba' else block_arnoldi_init
    stateA = init(A_op, F, deflation_tol)
    stateD = init(D_op.T, G, deflation_tol)

    relative = np.inf
    for iteration in range(1, itermax + 1):
        krylov_step(stateA)
        krylov_step(stateD)
        V, W = stateA.basis, stateD.basis
        F_m = V.T @ F
        G_m = W.T @ G
        Y = solve_sylvester(stateA.T_m, stateD.T_m.T, -F_m @ G_m.T, check=True)
        _, res_f = residual_norm(Y, stateA.T_next, stateD.T_next.T)
        relative = res_f / rhs_norm
        if relative < tol or (stateA.breakdown and stateD.breakdown):
            logger.debug(f"Krylov-Sylvester converged in {iteration} steps ({relative:.3e})")
            pair = truncated_svd_factor(Y, trunc_tol)
            return LowRankFactorPair(V @ pair.Z1, W @ pair.Z2)

    raise ConvergenceError(
        f"Krylov-Sylvester solve did not reach {tol:.1e} in {itermax} steps (residual {relative:.3e})",
        residual=float(relative), diagnostics={'dims': (stateA.dim(), stateD.dim())})


def newton_step_nare(current: LowRankFactorPair, A_cal: Tuple[StructuredOperator, float, float],
                     D_cal: Tuple[StructuredOperator, float, float], S: CouplingTerm, S_scale: float,
                     F_tilde: np.ndarray, G_tilde: np.ndarray,
                     opts: Optional[BDFNewtonOptions] = None) -> LowRankFactorPair:
    """
    One Newton iterate for -𝒜X - X𝒟 + X𝒮X + F̃G̃ᵀ = 0

    Solves (𝒜 - X_l𝒮)·X + X·(𝒟 - 𝒮X_l) = F̃G̃ᵀ - X_l𝒮X_l with 𝒜 = scale·A + shift·I,
    𝒟 = scale·D + shift·I and 𝒮 = S_scale·S; the X_l𝒮 corrections stay low rank.

    Args:
        current: X_l as factors
        A_cal, D_cal: (base operator, scale, shift)
        S: Quadratic coefficient
        S_scale: Factor hβ in 𝒮
        F_tilde, G_tilde: Constant-term factors

    Returns:
        Truncated factors of X_{l+1}
    """
    opts = opts or BDFNewtonOptions()
    Z1, Z2 = current.Z1, current.Z2
    A_base, a_scale, a_shift = A_cal
    D_base, d_scale, d_shift = D_cal

    if current.rank:
        S_Z1 = S_scale * S.apply(Z1)
        St_Z2 = S_scale * S.apply_transpose(Z2)
        A_op = ShiftedOperator(A_base, a_scale, a_shift, Z1, St_Z2)
        D_op = ShiftedOperator(D_base, d_scale, d_shift, S_Z1, Z2)
        coupling = Z2.T @ S_Z1
        F_rhs = np.hstack([-F_tilde, Z1 @ coupling])
        G_rhs = np.hstack([G_tilde, Z2])
    else:
        A_op = ShiftedOperator(A_base, a_scale, a_shift)
        D_op = ShiftedOperator(D_base, d_scale, d_shift)
        F_rhs, G_rhs = -F_tilde, G_tilde

    solution = sylvester_low_rank_krylov(A_op, D_op, F_rhs, G_rhs, opts.inner_tol, opts.inner_maxit,
                                         opts.krylov, opts.trunc_tol, opts.deflation_tol)
    if solution.rank > opts.r_max:
        solution = compress_factors(solution.Z1, solution.Z2, opts.trunc_tol, opts.r_max)
    return solution


def step_residual_factors(X: LowRankFactorPair, A_cal: Tuple[StructuredOperator, float, float],
                          D_cal: Tuple[StructuredOperator, float, float], S: CouplingTerm, S_scale: float,
                          F_tilde: np.ndarray, G_tilde: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """L, R with L·Rᵀ = -𝒜X - X𝒟 + X𝒮X + F̃G̃ᵀ, the residual of one BDF step's NARE"""
    if X.rank == 0:
        return F_tilde, G_tilde
    Z1, Z2 = X.Z1, X.Z2
    A_base, a_scale, a_shift = A_cal
    D_base, d_scale, d_shift = D_cal
    AZ1 = a_scale * A_base.apply(Z1) + a_shift * Z1
    DtZ2 = d_scale * D_base.apply_transpose(Z2) + d_shift * Z2
    coupling = Z2.T @ (S_scale * S.apply(Z1))
    left = np.hstack([-AZ1, -Z1, Z1 @ coupling, F_tilde])
    right = np.hstack([Z2, DtZ2, Z2, G_tilde])
    return left, right


def solve_ndre_bdf_newton(problem: NDREProblem, s_order: int = 1, h: float = 0.01, t_f: float = 1.0,
                          opts: Optional[BDFNewtonOptions] = None) -> LowRankSolution:
    """
    BDF(s)-Newton integration of the full NDRE in factored form

    Args:
        problem: NDRE instance
        s_order: BDF order (1, 2 or 3)
        h: Step size
        t_f: Final time
        opts: Newton and inner Krylov settings

    Returns:
        LowRankSolution with factors at the kept step times
    """
    opts = opts or BDFNewtonOptions()
    bdf_coefficients(s_order)
    steps, h = uniform_steps(h, t_f)
    keep = stored_steps(steps, h, opts.t_grid)
    report = SolveReport(method=f"bdf{s_order}-newton-{'ba' if opts.krylov == 'block' else 'eba'}")
    started = time.perf_counter()

    initial = compress_factors(problem.Z01, problem.Z02, opts.trunc_tol, opts.r_max)
    history = FactoredHistory(s_order)
    history.push(0.0, initial)
    times, factors = [0.0], [initial]
    relative = 0.0
    steps_converged = 0

    for step in range(steps):
        order = min(s_order, step + 1)
        beta, alphas = bdf_coefficients(order)
        hb = h * beta
        t_next = (step + 1) * h
        A_cal, D_cal = (problem.A, hb, 0.5), (problem.D, hb, 0.5)
        F_tilde, G_tilde = build_bdf_rhs_factors(history, problem.F, problem.G, h, beta, alphas,
                                                 opts.r_max, opts.trunc_tol)

        X = history.latest
        change = np.inf
        for iteration in range(1, opts.newton_maxit + 1):
            try:
                X_next = newton_step_nare(X, A_cal, D_cal, problem.S, hb, F_tilde, G_tilde, opts)
            except ConvergenceError as e:
                logger.error(f"Error in Newton iteration {iteration} of step {step + 1}: {e}")
                raise ConvergenceError(f"step {step + 1} (t={t_next:.6g}): {e}", residual=e.residual,
                                       diagnostics={'step': step + 1, 'iteration': iteration})
            base = X.norm()
            difference = X_next.distance(X)
            change = difference / base if base > 0 else (0.0 if difference == 0 else np.inf)
            X = X_next
            if change < opts.newton_tol:
                break

        if not change < opts.newton_tol:
            raise ConvergenceError(
                f"Newton stagnated at step {step + 1} (t={t_next:.6g}) after {opts.newton_maxit} iterations",
                residual=float(change), diagnostics={'step': step + 1})
        steps_converged += 1

        left, right = step_residual_factors(X, A_cal, D_cal, problem.S, hb, F_tilde, G_tilde)
        R_left, R_right = low_rank_triangular_factors(left, right)
        scale = low_rank_product_norm(F_tilde, G_tilde)
        scale = scale if scale > 0 else 1.0
        relative = float(np.linalg.norm(R_left @ R_right.T, 'fro')) / scale

        history.push(t_next, X)
        report.residual_history.append({
            'm_or_step': step + 1,
            'time': t_next,
            'residual_rel': relative,
            'rank': X.rank,
            'newton_change': float(change),
            'newton_iterations': iteration,
            'wall_seconds': time.perf_counter() - started,
        })
        report.snapshots.append({'R_left': R_left, 'R_right': R_right, 'scale': np.array(scale)})
        logger.info(f"BDF{order}-Newton step {step + 1}/{steps}: rank {X.rank}, {iteration} Newton iterations, "
                    f"step residual {relative:.3e}")
        if step + 1 in keep:
            times.append(t_next)
            factors.append(X)

    report.converged = steps_converged == steps
    report.steps = steps
    report.final_residual = relative
    report.truncation_ranks = [pair.rank for pair in factors]
    report.integrator = {'scheme': f'bdf{s_order}', 'h': h, 'steps': steps, 'krylov': opts.krylov,
                         'residual': 'step NARE, relative to the factored constant term'}
    report.timings = {'total': time.perf_counter() - started}
    return LowRankSolution(np.array(times), factors, relative, report.converged, report)
