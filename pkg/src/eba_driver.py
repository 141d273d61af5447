"""
Extended Block Arnoldi NDRE Driver
Grows both Krylov bases, solves the projected NDRE at check points and
returns factored approximations X_m(t) ≈ Z1(t)·Z2(t)ᵀ
"""

import numpy as np
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import (CHECK_EVERY, DEFAULT_TOL, DEFLATION_TOL, M_MAX, ORACLE_MAX_DIM,
                    ROSENBROCK_GAMMA, SUBSTEP_LIMIT, SUBSTEP_SCALE, TRUNC_TOL)

from .dense_kernels import LowRankFactorPair, truncated_svd_factor
from .exceptions import ConfigError, DimensionError, OracleScaleError, SingularOperatorError
from .krylov import (BlockKrylovState, block_arnoldi_init, eba_init, krylov_step,
                     projected_matrices)
from .operators import StructuredOperator, low_rank_product_norm
from .problem import NDREProblem, transport_matrix, validate_m_matrix
from .projected_integrators import INNER_METHODS, ProjectedNDRE, Trajectory, integrate_projected

logger = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    """Settings of the Krylov-projection solver"""

    m_max: int = M_MAX
    check_every: int = CHECK_EVERY
    tol_rel: float = DEFAULT_TOL
    inner: str = 'exp'
    h: float = 0.01
    t_f: float = 1.0
    t_grid: Optional[Sequence[float]] = None
    trunc_tol: float = TRUNC_TOL
    residual_norm: str = 'fro'
    krylov: str = 'eba'
    deflation_tol: float = DEFLATION_TOL
    newton_tol: float = 1e-12
    newton_itermax: int = 50
    rosenbrock_gamma: float = ROSENBROCK_GAMMA
    rosenbrock_variant: str = 'literal'
    substep_limit: int = SUBSTEP_LIMIT
    substep_scale: float = SUBSTEP_SCALE

    def __post_init__(self):
        for name in ('m_max', 'check_every', 'newton_itermax', 'substep_limit'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer", field=name)
        for name in ('tol_rel', 'h', 't_f', 'trunc_tol', 'newton_tol', 'substep_scale'):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive", field=name)
        if self.inner not in INNER_METHODS:
            raise ConfigError(f"inner integrator must be one of {INNER_METHODS}", field='inner')
        if self.residual_norm not in ('fro', '2'):
            raise ConfigError("residual_norm must be 'fro' or '2'", field='residual_norm')
        if self.krylov not in ('eba', 'block'):
            raise ConfigError("krylov must be 'eba' or 'block'", field='krylov')
        if self.t_grid is not None:
            grid = np.asarray(self.t_grid, dtype=float)
            if grid.size and (grid.min() < 0 or grid.max() > self.t_f + 1e-12):
                raise ConfigError(f"t_grid must lie in [0, {self.t_f}]", field='t_grid')

    def output_times(self) -> np.ndarray:
        grid = [] if self.t_grid is None else list(np.asarray(self.t_grid, dtype=float).ravel())
        return np.unique(np.concatenate([grid, [self.t_f]]))


@dataclass
class SolveReport:
    """Residual history, timings, subspace dimensions and integrator diagnostics"""

    method: str
    converged: bool = False
    final_residual: float = float('nan')
    steps: int = 0
    residual_history: List[Dict] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    subspace_dims: Dict[str, int] = field(default_factory=dict)
    truncation_ranks: List[int] = field(default_factory=list)
    integrator: Dict = field(default_factory=dict)
    fallbacks: Dict[str, str] = field(default_factory=dict)
    deflation: Dict[str, List] = field(default_factory=dict)
    perturbation_norms: List[Dict] = field(default_factory=list)
    bounds: Dict = field(default_factory=dict)
    selected_m: Optional[int] = None
    snapshots: List[Dict[str, np.ndarray]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data.pop('snapshots')
        return data


@dataclass
class LowRankSolution:
    """Factored solution at the output times, with the data that reproduces its residual"""

    times: np.ndarray
    factors: List[LowRankFactorPair]
    residual: float
    converged: bool
    report: SolveReport
    Y: List[np.ndarray] = field(default_factory=list)
    stateA: Optional[BlockKrylovState] = None
    stateD: Optional[BlockKrylovState] = None
    projected: Optional[ProjectedNDRE] = None

    @property
    def final(self) -> LowRankFactorPair:
        return self.factors[-1]

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def residual_norm(Y: np.ndarray, T_next_A: np.ndarray, T_next_D: np.ndarray) -> Tuple[float, float]:
    """
    Residual of X_m = 𝒱·Y·𝒲ᵀ from the last Krylov blocks only

    Returns:
        Tuple of (max{‖T^A_{m+1,m}·E_mᵀ·Y‖₂, ‖Y·E_m·T^D_{m+1,m}‖₂},
                  √(‖T^A_{m+1,m}·E_mᵀ·Y‖_F² + ‖Y·E_m·T^D_{m+1,m}‖_F²))
    """
    k, l = Y.shape
    w_A = T_next_A.shape[1]
    w_D = T_next_D.shape[0]
    if w_A > k or w_D > l:
        raise DimensionError(f"residual blocks ({w_A}, {w_D}) exceed projected size {Y.shape}")

    left = T_next_A @ Y[k - w_A:, :]
    right = Y[:, l - w_D:] @ T_next_D

    def _norms(M: np.ndarray) -> Tuple[float, float]:
        if M.size == 0:
            return 0.0, 0.0
        return float(np.linalg.norm(M, 2)), float(np.linalg.norm(M, 'fro'))

    left_2, left_f = _norms(left)
    right_2, right_f = _norms(right)
    return max(left_2, right_2), float(np.hypot(left_f, right_f))


def perturbation_norms(stateA: BlockKrylovState, stateD: BlockKrylovState) -> Tuple[float, float]:
    """‖Δ_m^A‖₂ = ‖T^A_{m+1,m}‖₂ and ‖Δ_m^D‖₂ = ‖T^D_{m+1,m}‖₂"""
    def _norm(T: np.ndarray) -> float:
        return float(np.linalg.norm(T, 2)) if T.size else 0.0
    return _norm(stateA.T_next), _norm(stateD.T_next)


def _init_side(op: StructuredOperator, start: np.ndarray, side: str, opts: SolverOptions,
               report: SolveReport) -> BlockKrylovState:
    if opts.krylov == 'eba':
        try:
            return eba_init(op, start, opts.deflation_tol)
        except SingularOperatorError as e:
            logger.warning(f"{side}-side inverse unavailable ({e}); switching to block Arnoldi")
            report.fallbacks[side] = 'block-arnoldi'
    return block_arnoldi_init(op, start, opts.deflation_tol)


def _starting_blocks(problem: NDREProblem) -> Tuple[np.ndarray, np.ndarray]:
    if problem.has_initial_value:
        return np.hstack([problem.F, problem.Z01]), np.hstack([problem.G, problem.Z02])
    return problem.F, problem.G


def _zero_solution(problem: NDREProblem, opts: SolverOptions, report: SolveReport) -> LowRankSolution:
    times = opts.output_times()
    report.converged = True
    report.final_residual = 0.0
    report.steps = 1
    report.residual_history.append({'m_or_step': 1, 'time': float(opts.t_f), 'residual_rel': 0.0,
                                    'residual_2': 0.0, 'rank': 0, 'wall_seconds': 0.0})
    factors = [LowRankFactorPair.zeros(problem.n, problem.p) for _ in times]
    logger.info("F·Gᵀ = 0 and X0 = 0: returning the zero solution")
    return LowRankSolution(times, factors, 0.0, True, report, Y=[np.zeros((0, 0)) for _ in times])


def solve_ndre(problem: NDREProblem, opts: Optional[SolverOptions] = None) -> LowRankSolution:
    """
    Krylov-projection solver for the NDRE

    Args:
        problem: NDRE instance
        opts: Solver settings

    Returns:
        LowRankSolution with factors at every output time
    """
    opts = opts or SolverOptions()
    report = SolveReport(method=f"{opts.krylov}-{opts.inner}")
    started = time.perf_counter()
    q_norm = problem.q_norm()
    scale = q_norm if q_norm > 0 else low_rank_product_norm(problem.Z01, problem.Z02)

    if scale == 0.0:
        return _zero_solution(problem, opts, report)

    start_A, start_D = _starting_blocks(problem)
    stateA = _init_side(problem.A, start_A, 'A', opts, report)
    stateD = _init_side(problem.D.T, start_D, 'D', opts, report)

    output_times = opts.output_times()
    basis_seconds = 0.0
    solve_seconds = 0.0
    trajectory: Optional[Trajectory] = None
    proj: Optional[ProjectedNDRE] = None
    relative = float('inf')
    best: Optional[Tuple] = None

    for m in range(1, opts.m_max + 1):
        tic = time.perf_counter()
        krylov_step(stateA)
        krylov_step(stateD)
        basis_seconds += time.perf_counter() - tic

        both_invariant = stateA.breakdown and stateD.breakdown
        if m % opts.check_every and m != opts.m_max and not both_invariant:
            continue

        tic = time.perf_counter()
        proj = projected_matrices(stateA, stateD, problem)
        try:
            trajectory = integrate_projected(
                proj, opts.inner, opts.h, opts.t_f, t_grid=output_times,
                newton_tol=opts.newton_tol, newton_itermax=opts.newton_itermax,
                gamma=opts.rosenbrock_gamma, rosenbrock_variant=opts.rosenbrock_variant,
                substep_limit=opts.substep_limit, substep_scale=opts.substep_scale)
        except Exception as e:
            logger.error(f"Error solving the projected NDRE at m={m}: {e}")
            raise
        solve_seconds += time.perf_counter() - tic

        Y_f = trajectory.final
        res_2, res_f = residual_norm(Y_f, proj.T_next_A, proj.T_next_D)
        relative = (res_f if opts.residual_norm == 'fro' else res_2) / scale
        rank = truncated_svd_factor(Y_f, opts.trunc_tol).rank
        delta_A, delta_D = perturbation_norms(stateA, stateD)

        report.residual_history.append({
            'm_or_step': m,
            'time': float(opts.t_f),
            'residual_rel': float(relative),
            'residual_2': float(res_2 / scale),
            'rank': rank,
            'dim_A': proj.k,
            'dim_D': proj.l,
            'wall_seconds': time.perf_counter() - started,
        })
        report.perturbation_norms.append({'m': m, 'delta_A': delta_A, 'delta_D': delta_D})
        report.snapshots.append({'Y': Y_f.copy(), 'T_next_A': proj.T_next_A.copy(),
                                 'T_next_D': proj.T_next_D.copy(), 'scale': np.array(scale)})
        logger.info(f"m={m}: dims ({proj.k}, {proj.l}), relative residual {relative:.3e}")
        if best is None or relative < best[0]:
            best = (relative, m, stateA.m, stateD.m, trajectory, proj)

        if relative < opts.tol_rel or both_invariant:
            report.converged = True
            break

    if report.converged:
        report.selected_m = report.residual_history[-1]['m_or_step']
    elif best is not None:
        relative, report.selected_m, mA, mD, trajectory, proj = best
        if (stateA.m, stateD.m) != (mA, mD):
            stateA.truncate(mA)
            stateD.truncate(mD)
            logger.warning(f"keeping the iterate of m={report.selected_m}, the smallest residual seen")

    report.steps = stateA.m
    report.final_residual = float(relative)
    report.subspace_dims = {'A': stateA.dim(), 'D': stateD.dim()}
    report.deflation = {'A': list(stateA.deflation_log), 'D': list(stateD.deflation_log)}
    report.integrator = dict(trajectory.diagnostics) if trajectory is not None else {}
    if not report.converged:
        logger.warning(f"no convergence after m={opts.m_max} steps (best relative residual {relative:.3e})")

    V, W = stateA.basis, stateD.basis
    factors, snapshots = [], []
    for t in output_times:
        Y_t = trajectory.value_at(t)
        pair = truncated_svd_factor(Y_t, opts.trunc_tol)
        factors.append(LowRankFactorPair(V @ pair.Z1, W @ pair.Z2))
        report.truncation_ranks.append(pair.rank)
        snapshots.append(Y_t)

    report.timings = {'basis': basis_seconds, 'projected_solve': solve_seconds,
                      'total': time.perf_counter() - started}
    return LowRankSolution(output_times, factors, float(relative), report.converged, report,
                           Y=snapshots, stateA=stateA, stateD=stateD, projected=proj)


def _basis(basis: Union[BlockKrylovState, np.ndarray, None], fallback: Optional[BlockKrylovState]) -> np.ndarray:
    if basis is None:
        basis = fallback
    if isinstance(basis, BlockKrylovState):
        return basis.basis
    return np.asarray(basis)


def assemble_dense(solution: LowRankSolution, basisA=None, basisD=None, t_index: int = -1,
                   max_dim: int = ORACLE_MAX_DIM) -> np.ndarray:
    """X_m(t) = 𝒱_m·Y_m(t)·𝒲_mᵀ as a dense matrix"""
    V = _basis(basisA, solution.stateA)
    W = _basis(basisD, solution.stateD)
    if V.shape[0] + W.shape[0] > max_dim:
        raise OracleScaleError(f"assembling {V.shape[0]}x{W.shape[0]} exceeds the oracle cap {max_dim}")
    return V @ solution.Y[t_index] @ W.T


def dense_residual(problem: NDREProblem, X: np.ndarray, X_dot: np.ndarray) -> np.ndarray:
    """Ẋ + A·X + X·D - X·S·X - F·Gᵀ"""
    XD = problem.D.apply_transpose(X.T).T
    return X_dot + problem.A.apply(X) + XD - X @ problem.S.apply(X) - problem.F @ problem.G.T


def _last_blocks(state: BlockKrylovState) -> Tuple[np.ndarray, np.ndarray]:
    return state.blocks[state.m - 1], state.next_block


def perturbed_equation_residual(problem: NDREProblem, solution: LowRankSolution,
                                stateA: Optional[BlockKrylovState] = None,
                                stateD: Optional[BlockKrylovState] = None,
                                t_index: int = -1) -> Dict:
    """
    Compare the residual of X_m(t) with Δ_m^A·X_m + X_m·Δ_m^D

    Δ_m^A = V_{m+1}·T^A_{m+1,m}·V_mᵀ and Δ_m^D = W_m·T^D_{m+1,m}·W_{m+1}ᵀ; X_m
    solves the NDRE with A - Δ_m^A and D - Δ_m^D exactly.
    """
    stateA = stateA or solution.stateA
    stateD = stateD or solution.stateD
    proj = projected_matrices(stateA, stateD, problem)
    Y = solution.Y[t_index]
    V, W = stateA.basis, stateD.basis

    X = V @ Y @ W.T
    X_dot = V @ proj.rhs(Y) @ W.T
    residual = dense_residual(problem, X, X_dot)

    V_m, V_next = _last_blocks(stateA)
    W_m, W_next = _last_blocks(stateD)
    delta_A = V_next @ proj.T_next_A @ V_m.T
    delta_D = W_m @ proj.T_next_D @ W_next.T
    perturbation = delta_A @ X + X @ delta_D

    return {
        'residual': residual,
        'perturbation': perturbation,
        'mismatch': float(np.linalg.norm(residual - perturbation, 'fro')),
        'delta_A': delta_A,
        'delta_D': delta_D,
    }


def perturbed_m_matrix(problem: NDREProblem, stateA: BlockKrylovState,
                       stateD: BlockKrylovState) -> Tuple[np.ndarray, str]:
    """𝓛_m = 𝓛 - blkdiag(Δ_m^D, Δ_m^A) and its M-matrix classification"""
    proj = projected_matrices(stateA, stateD, problem)
    V_m, V_next = _last_blocks(stateA)
    W_m, W_next = _last_blocks(stateD)
    delta_A = V_next @ proj.T_next_A @ V_m.T
    delta_D = W_m @ proj.T_next_D @ W_next.T

    L = transport_matrix(problem)
    p = problem.p
    L_m = L.copy()
    L_m[:p, :p] -= delta_D
    L_m[p:, p:] -= delta_A
    return L_m, validate_m_matrix(L_m)
