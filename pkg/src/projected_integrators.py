"""
Projected NDRE Integrators
Exponential (modified Davison-Maki), BDF and two-stage Rosenbrock schemes
for the small Galerkin system Ẏ = -T_A·Y - Y·T_D + Y·S_m·Y + F_m·G_mᵀ
"""

import numpy as np
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import ROSENBROCK_GAMMA, SUBSTEP_LIMIT, SUBSTEP_SCALE

from .dense_kernels import (bdf_coefficients, matrix_exponential, solve_small_nare_newton,
                            solve_sylvester)
from .exceptions import (ConditioningError, ConvergenceError, DimensionError, MatrixExponentialOverflow,
                         ProblemDefinitionError, SingularSylvesterError)

logger = logging.getLogger(__name__)

QUOTIENT_COND_LIMIT = 1e12
INNER_METHODS = ('exp', 'bdf1', 'bdf2', 'bdf3', 'rosenbrock2')


@dataclass
class ProjectedNDRE:
    """Small matrices of the Galerkin system; T_next_* are kept for residual evaluation"""

    T_A: np.ndarray
    T_D: np.ndarray
    S_m: np.ndarray
    F_m: np.ndarray
    G_m: np.ndarray
    Y0: Optional[np.ndarray] = None
    T_next_A: Optional[np.ndarray] = None
    T_next_D: Optional[np.ndarray] = None

    def __post_init__(self):
        k, l = self.T_A.shape[0], self.T_D.shape[0]
        if self.T_A.shape != (k, k) or self.T_D.shape != (l, l):
            raise DimensionError(f"T_A {self.T_A.shape} and T_D {self.T_D.shape} must be square")
        if self.S_m.shape != (l, k):
            raise DimensionError(f"S_m must be {l}x{k}, got {self.S_m.shape}")
        if self.F_m.shape[0] != k or self.G_m.shape[0] != l or self.F_m.shape[1] != self.G_m.shape[1]:
            raise DimensionError(f"F_m {self.F_m.shape} / G_m {self.G_m.shape} do not match ({k}, {l})")
        if self.Y0 is None:
            self.Y0 = np.zeros((k, l))
        elif self.Y0.shape != (k, l):
            raise DimensionError(f"Y0 must be {k}x{l}, got {self.Y0.shape}")

    @property
    def k(self) -> int:
        return self.T_A.shape[0]

    @property
    def l(self) -> int:
        return self.T_D.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return self.F_m @ self.G_m.T

    def rhs(self, Y: np.ndarray) -> np.ndarray:
        """ℱ(Y) = -T_A·Y - Y·T_D + Y·S_m·Y + F_m·G_mᵀ"""
        return -self.T_A @ Y - Y @ self.T_D + Y @ self.S_m @ Y + self.Q

    def embedding(self) -> np.ndarray:
        """ℋ_m = [[T_D, -S_m], [F_m·G_mᵀ, -T_A]]"""
        return np.block([[self.T_D, -self.S_m],
                         [self.Q, -self.T_A]])


@dataclass
class Trajectory:
    """Values Y(t_i) on an increasing time grid"""

    times: np.ndarray
    values: List[np.ndarray]
    diagnostics: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.values):
            raise DimensionError(f"{len(self.times)} times but {len(self.values)} values")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ProblemDefinitionError("trajectory times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def value_at(self, t: float) -> np.ndarray:
        """Stored value at the grid point nearest to t"""
        return self.values[self.index_of(t)]


def time_grid(t_grid: Sequence[float]) -> np.ndarray:
    times = np.asarray(t_grid, dtype=float).ravel()
    if times.size == 0:
        raise ProblemDefinitionError("empty time grid")
    if times[0] < 0:
        raise ProblemDefinitionError("time grid must start at t >= 0")
    if times[0] > 0:
        times = np.concatenate([[0.0], times])
    if np.any(np.diff(times) <= 0):
        raise ProblemDefinitionError("time grid must be strictly increasing")
    return times


def quotient_substep(E: np.ndarray, Y: np.ndarray,
                     cond_limit: float = QUOTIENT_COND_LIMIT) -> Tuple[Optional[np.ndarray], float]:
    """
    One restarted Davison-Maki substep: [U1; U2] = E·[I; Y], return U2·U1⁻¹

    Returns (None, cond) when U1 is too ill-conditioned for the quotient.
    """
    l = Y.shape[1]
    U = E[:, :l] + E[:, l:] @ Y
    U1, U2 = U[:l], U[l:]
    condition = float(np.linalg.cond(U1)) if l else 1.0
    if not np.isfinite(condition) or condition > cond_limit:
        return None, condition
    return np.linalg.solve(U1.T, U2.T).T, condition


def davison_maki_trajectory(H: np.ndarray, Y0: np.ndarray, times: np.ndarray, h_sub: float,
                            substep_limit: int = SUBSTEP_LIMIT,
                            cond_limit: float = QUOTIENT_COND_LIMIT) -> Tuple[List[np.ndarray], Dict]:
    """
    Riccati flow from the linear embedding with a restart at [I; Y] after every substep

    Args:
        H: (l+k)×(l+k) embedding with the l×l block on top
        Y0: k×l value at times[0]
        times: Increasing output times
        h_sub: Initial substep
        substep_limit: Halvings allowed within a single substep

    Returns:
        Tuple of (values at times, diagnostics)
    """
    exponentials: Dict[float, np.ndarray] = {}
    values = [Y0.copy()]
    Y = Y0.copy()
    substeps = 0
    halvings = 0
    worst_condition = 1.0
    h_current = h_sub

    for i in range(1, len(times)):
        remaining = times[i] - times[i - 1]
        while remaining > 1e-14 * max(1.0, times[i]):
            h = min(h_current, remaining)
            attempts = 0
            while True:
                try:
                    if h not in exponentials:
                        exponentials[h] = matrix_exponential(h * H)
                    Y_next, condition = quotient_substep(exponentials[h], Y, cond_limit)
                except MatrixExponentialOverflow:
                    Y_next, condition = None, np.inf
                if Y_next is not None:
                    break
                attempts += 1
                if attempts > substep_limit:
                    t_fail = times[i] - remaining
                    raise ConditioningError(
                        f"quotient ill-conditioned (cond {condition:.3e}) at t={t_fail:.6g} "
                        f"after {substep_limit} substep halvings")
                h = h / 2.0
                halvings += 1
                logger.warning(f"Davison-Maki substep halved to {h:.3e} (cond {condition:.3e})")
            if attempts:
                h_current = h
            worst_condition = max(worst_condition, condition)
            Y = Y_next
            remaining -= h
            substeps += 1
        values.append(Y.copy())

    diagnostics = {'substeps': substeps, 'halvings': halvings, 'h_sub': h_current,
                   'worst_condition': worst_condition}
    return values, diagnostics


def solve_projected_exp(proj: ProjectedNDRE, t_grid: Sequence[float],
                        substep_limit: int = SUBSTEP_LIMIT, h_sub: Optional[float] = None,
                        substep_scale: float = SUBSTEP_SCALE) -> Trajectory:
    """
    Exponential solution of the projected NDRE via the modified Davison-Maki method

    The default substep is min(grid spacing, substep_scale/‖ℋ_m‖₁).
    """
    times = time_grid(t_grid)
    H = proj.embedding()
    spacing = float(np.min(np.diff(times))) if len(times) > 1 else 1.0
    if h_sub is None:
        h_norm = float(np.linalg.norm(H, 1))
        h_sub = min(spacing, substep_scale / h_norm) if h_norm > 0 else spacing

    values, diagnostics = davison_maki_trajectory(H, proj.Y0, times, h_sub, substep_limit)
    diagnostics['scheme'] = 'exp'
    logger.debug(f"exp scheme: {diagnostics['substeps']} substeps, {diagnostics['halvings']} halvings")
    return Trajectory(times, values, diagnostics)


def uniform_steps(h: float, t_f: float) -> Tuple[int, float]:
    if h <= 0 or t_f <= 0:
        raise ProblemDefinitionError(f"step size and final time must be positive (h={h}, t_f={t_f})")
    steps = max(1, int(round(t_f / h)))
    if abs(steps * h - t_f) > 1e-9 * max(t_f, 1.0):
        adjusted = t_f / steps
        logger.warning(f"step {h} does not divide t_f={t_f}; using h={adjusted}")
        h = adjusted
    return steps, h


def stored_steps(steps: int, h: float, t_grid: Optional[Sequence[float]]) -> set:
    if t_grid is None:
        return set(range(steps + 1))
    wanted = {0, steps}
    for t in np.asarray(t_grid, dtype=float).ravel():
        wanted.add(int(min(max(round(t / h), 0), steps)))
    return wanted


def solve_projected_bdf(proj: ProjectedNDRE, s_order: int = 1, h: float = 0.01, t_f: float = 1.0,
                        newton_tol: float = 1e-12, newton_itermax: int = 50,
                        t_grid: Optional[Sequence[float]] = None) -> Trajectory:
    """
    BDF(s) integration of the projected NDRE

    Each step solves the small NARE
        (½I + hβ·T_A)·Y + Y·(½I + hβ·T_D) - Y·(hβ·S_m)·Y = hβ·F_mG_mᵀ + Σ α_i·Y_{k-i}
    by Newton warm-started at Y_k. Orders above 1 start with the lower-order formulas.

    Args:
        proj: Projected problem
        s_order: BDF order (1, 2 or 3)
        h: Step size
        t_f: Final time
        t_grid: Times to keep (nearest step); all steps are kept when omitted

    Returns:
        Trajectory on the kept step times
    """
    bdf_coefficients(s_order)
    steps, h = uniform_steps(h, t_f)
    keep = stored_steps(steps, h, t_grid)

    I_k, I_l = np.eye(proj.k), np.eye(proj.l)
    Q = proj.Q
    history = [proj.Y0.copy()]
    times, values = [0.0], [proj.Y0.copy()]
    newton_iterations = []

    for step in range(steps):
        order = min(s_order, step + 1)
        beta, alphas = bdf_coefficients(order)
        hb = h * beta
        constant = hb * Q
        for i, alpha in enumerate(alphas):
            constant = constant + alpha * history[-1 - i]

        try:
            result = solve_small_nare_newton(0.5 * I_k + hb * proj.T_A, 0.5 * I_l + hb * proj.T_D,
                                             hb * proj.S_m, constant, X_init=history[-1],
                                             tol=newton_tol, itermax=newton_itermax)
        except ConvergenceError as e:
            logger.error(f"Error in BDF{order} step {step + 1}: {e}")
            raise ConvergenceError(f"BDF{order} step {step + 1} (t={(step + 1) * h:.6g}) failed: {e}",
                                   residual=e.residual, diagnostics={'step': step + 1, **e.diagnostics})

        history.append(result.X)
        if len(history) > s_order:
            history.pop(0)
        newton_iterations.append(result.iterations)
        if step + 1 in keep:
            times.append((step + 1) * h)
            values.append(result.X)

    diagnostics = {'scheme': f'bdf{s_order}', 'steps': steps, 'h': h,
                   'newton_iterations_max': max(newton_iterations) if newton_iterations else 0}
    return Trajectory(np.array(times), values, diagnostics)


def solve_projected_rosenbrock2(proj: ProjectedNDRE, h: float = 0.01, gamma: float = ROSENBROCK_GAMMA,
                                t_f: float = 1.0, variant: str = 'literal',
                                t_grid: Optional[Sequence[float]] = None) -> Trajectory:
    """
    Two-stage Rosenbrock scheme with two Sylvester solves per step

    variant 'literal' uses 𝕋 = γ·T - I/(2h) on both sides; 'ros2' uses the
    linearly implicit form 𝕋 = -γ·T - I/(2h).
    """
    if variant not in ('literal', 'ros2'):
        raise ProblemDefinitionError(f"unknown Rosenbrock variant '{variant}'")
    steps, h = uniform_steps(h, t_f)
    keep = stored_steps(steps, h, t_grid)

    sign = 1.0 if variant == 'literal' else -1.0
    TA = sign * gamma * proj.T_A - np.eye(proj.k) / (2.0 * h)
    TD = sign * gamma * proj.T_D - np.eye(proj.l) / (2.0 * h)

    Y = proj.Y0.copy()
    times, values = [0.0], [Y.copy()]
    for step in range(steps):
        try:
            H1 = solve_sylvester(TA, TD, -proj.rhs(Y))
            H2 = solve_sylvester(TA, TD, -proj.rhs(Y + H1) + (2.0 / h) * H1)
        except SingularSylvesterError as e:
            logger.error(f"Error in Rosenbrock step {step + 1}: {e}")
            raise SingularSylvesterError(f"Rosenbrock step {step + 1} with h={h}: {e}; try a smaller step")
        Y = Y + 1.5 * H1 + 0.5 * H2
        if step + 1 in keep:
            times.append((step + 1) * h)
            values.append(Y.copy())

    return Trajectory(np.array(times), values, {'scheme': 'rosenbrock2', 'variant': variant,
                                                'steps': steps, 'h': h, 'gamma': gamma})


def integrate_projected(proj: ProjectedNDRE, method: str, h: float, t_f: float,
                        t_grid: Optional[Sequence[float]] = None, newton_tol: float = 1e-12,
                        newton_itermax: int = 50, gamma: float = ROSENBROCK_GAMMA,
                        rosenbrock_variant: str = 'literal', substep_limit: int = SUBSTEP_LIMIT,
                        substep_scale: float = SUBSTEP_SCALE) -> Trajectory:
    """Dispatch to the configured projected scheme"""
    if method == 'exp':
        grid = np.unique(np.concatenate([[0.0], np.asarray(t_grid if t_grid is not None else [], float), [t_f]]))
        return solve_projected_exp(proj, grid, substep_limit=substep_limit, substep_scale=substep_scale)
    if method in ('bdf1', 'bdf2', 'bdf3'):
        return solve_projected_bdf(proj, int(method[-1]), h, t_f, newton_tol, newton_itermax, t_grid)
    if method == 'rosenbrock2':
        return solve_projected_rosenbrock2(proj, h, gamma, t_f, rosenbrock_variant, t_grid)
    raise ProblemDefinitionError(f"unknown inner integrator '{method}' (expected one of {INNER_METHODS})")
