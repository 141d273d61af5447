"""
A-posteriori Error Bounds
Logarithmic norms, fundamental-solution bounds, the nonlocal error bound
and matrix-exponential norm bounds
"""

import math
import numpy as np
import scipy.linalg as sla
from dataclasses import asdict, dataclass
from typing import Dict, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import ORACLE_MAX_DIM

from .eba_driver import perturbation_norms
from .exceptions import DimensionError, OracleScaleError, ProblemDefinitionError

logger = logging.getLogger(__name__)

EXP_OVERFLOW = 700.0
EXPM_BOUND_METHODS = ('power-series', 'log-norm', 'schur')


def log_norm(M: np.ndarray) -> float:
    """μ₂(M) = λ_max((M + Mᵀ)/2)"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"logarithmic norm needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def growth_bounds(lam: float, xi: float, t_f: float) -> Tuple[float, float]:
    """ν₂ = ∫₀^{t_f} e^{(λ₊+ξ₊)r} dr and κ₂ = e^{(λ₊+ξ₊)t_f}; +∞ when the exponent overflows"""
    rate = max(lam, 0.0) + max(xi, 0.0)
    exponent = rate * t_f
    if exponent > EXP_OVERFLOW:
        logger.warning(f"growth exponent {exponent:.3e} overflows; bounds are infinite")
        return math.inf, math.inf
    kappa = math.exp(exponent)
    nu = t_f if rate == 0.0 else math.expm1(exponent) / rate
    return nu, kappa


def fundamental_norm_bounds(A_c: np.ndarray, D_c: np.ndarray, t_f: float,
                            generator: str = 'negated') -> Tuple[float, float]:
    """
    (ν₂, κ₂) for constant closed-loop coefficients

    The error flow is driven by -A_c and -D_c, so generator='negated' takes the
    logarithmic norms of those; 'literal' uses A_c and D_c as given.
    """
    if t_f <= 0:
        raise ProblemDefinitionError(f"t_f must be positive, got {t_f}")
    if generator not in ('negated', 'literal'):
        raise ProblemDefinitionError(f"unknown generator convention '{generator}'")
    sign = -1.0 if generator == 'negated' else 1.0
    return growth_bounds(log_norm(sign * np.asarray(A_c)), log_norm(sign * np.asarray(D_c)), t_f)


@dataclass
class BoundInputs:
    """Scalars entering the nonlocal bound; ν and κ may come from any admissible estimate"""

    nu: float
    kappa: float
    S_norm: float
    X_norm: float
    delta_A_norm: float
    delta_D_norm: float
    E0_norm: float
    t_f: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0 or np.isnan(value):
                raise ProblemDefinitionError(f"bound input {name} must be nonnegative, got {value}")

    @classmethod
    def from_closed_loop(cls, A_c: np.ndarray, D_c: np.ndarray, t_f: float, S_norm: float,
                         X_norm: float, delta_A_norm: float, delta_D_norm: float, E0_norm: float,
                         generator: str = 'negated') -> 'BoundInputs':
        nu, kappa = fundamental_norm_bounds(A_c, D_c, t_f, generator)
        return cls(nu, kappa, S_norm, X_norm, delta_A_norm, delta_D_norm, E0_norm, t_f)


def nonlocal_error_bound(inputs: BoundInputs) -> Dict:
    """
    ρ = 2a₁ / (1 + √(1 - 4a₀a₁)) when a₀a₁ ≤ 1/4

    a₀ = ν‖S‖ and a₁ = ν‖X_m‖(‖Δ_m^A‖ + ‖Δ_m^D‖) + κ‖ℰ_m(0)‖. An infeasible
    product is reported as a value.
    """
    a0 = inputs.nu * inputs.S_norm
    a1 = inputs.nu * inputs.X_norm * (inputs.delta_A_norm + inputs.delta_D_norm) + inputs.kappa * inputs.E0_norm
    if a1 == 0.0:
        product = 0.0
    else:
        product = a0 * a1

    result = {'a0': float(a0), 'a1': float(a1), 'a0a1': float(product)}
    if not np.isfinite(product) or product > 0.25:
        result.update({'feasible': False, 'rho': math.inf})
        return result

    rho = 2.0 * a1 / (1.0 + math.sqrt(max(1.0 - 4.0 * product, 0.0)))
    result.update({'feasible': True, 'rho': float(rho)})
    return result


def _nilpotency_index(N: np.ndarray, varpi: float, tol_rel: float = 1e-14) -> int:
    """Smallest q with ‖N^q‖ negligible against ϖ^q"""
    d = N.shape[0]
    power = np.eye(d, dtype=N.dtype)
    for k in range(1, d + 1):
        power = power @ N
        if np.linalg.norm(power, 2) <= tol_rel * varpi ** k:
            return k
    return d


def expm_norm_bound(P: np.ndarray, t: float, method: str = 'log-norm') -> float:
    """
    g(t) ≥ ‖e^{tP}‖₂

    power-series: e^{‖P‖t}
    log-norm:     e^{μ(P)t}
    schur:        e^{α(P)t}·Σ_{k<q}(‖N‖t)^k/k! with N the strictly upper Schur part
                  and q its nilpotency index
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"exponential bound needs a square matrix, got {P.shape}")
    if t < 0:
        raise ProblemDefinitionError(f"t must be nonnegative, got {t}")

    if method == 'power-series':
        return math.exp(float(np.linalg.norm(P, 2)) * t) if P.size else 1.0
    if method == 'log-norm':
        return math.exp(log_norm(P) * t)
    if method == 'schur':
        if P.size == 0:
            return 1.0
        T, _ = sla.schur(P, output='complex')
        alpha = float(np.max(np.real(np.diag(T))))
        N = np.triu(T, 1)
        varpi = float(np.linalg.norm(N, 2))
        if varpi <= 1e-14 * max(1.0, float(np.linalg.norm(P, 2))):
            return math.exp(alpha * t)
        q = _nilpotency_index(N, varpi)
        series = sum((varpi * t) ** k / math.factorial(k) for k in range(q))
        return math.exp(alpha * t) * series
    raise ProblemDefinitionError(f"unknown bound method '{method}' (expected one of {EXPM_BOUND_METHODS})")


def trajectory_bound_inputs(problem, solution, generator: str = 'negated',
                            max_dim: int = ORACLE_MAX_DIM) -> BoundInputs:
    """
    Bound inputs along a computed trajectory X_m(t)

    Logarithmic norms of the closed-loop generators and ‖X_m(t)‖ are maximised
    over the stored output times.
    """
    if problem.n + problem.p > max_dim:
        raise OracleScaleError(f"n + p = {problem.n + problem.p} exceeds the oracle cap {max_dim}")
    dense = problem.dense_coefficients(max_dim)
    A, D, S = dense['A'], dense['D'], dense['S']
    sign = -1.0 if generator == 'negated' else 1.0

    lam, xi, x_norm = -math.inf, -math.inf, 0.0
    for pair in solution.factors:
        X = pair.to_dense()
        lam = max(lam, log_norm(sign * (A - X @ S)))
        xi = max(xi, log_norm(sign * (D - S @ X)))
        x_norm = max(x_norm, float(np.linalg.norm(X, 2)))

    t_f = float(solution.times[-1])
    nu, kappa = growth_bounds(lam, xi, t_f)
    delta_A, delta_D = perturbation_norms(solution.stateA, solution.stateD)
    X_m0 = solution.stateA.basis @ solution.projected.Y0 @ solution.stateD.basis.T
    E0 = dense['X0'] - X_m0
    return BoundInputs(nu, kappa, float(np.linalg.norm(S, 2)), x_norm, delta_A, delta_D,
                       float(np.linalg.norm(E0, 2)), t_f)


def error_bound_report(problem, solution, generator: str = 'negated') -> Dict:
    """Bound inputs and the resulting ρ, ready for the solve report"""
    inputs = trajectory_bound_inputs(problem, solution, generator)
    result = nonlocal_error_bound(inputs)
    result['inputs'] = asdict(inputs)
    result['generator'] = generator
    logger.info(f"nonlocal bound: feasible={result['feasible']}, rho={result['rho']:.3e}")
    return result
