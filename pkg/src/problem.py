"""
NDRE Problem Definitions
Problem container, transport-theory and tridiagonal test families, M-matrix checks
"""

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.special
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import ORACLE_MAX_DIM

from .exceptions import DimensionError, OracleScaleError, ProblemDefinitionError, SingularOperatorError
from .operators import (CouplingTerm, DenseOperator, DiagPlusRankOne, SparseOperator,
                        StructuredOperator, low_rank_product_norm, sherman_morrison_vanishes)

logger = logging.getLogger(__name__)

GOLUB_WELSCH_MAX = 500

NONSINGULAR_M = 'nonsingular-M'
SINGULAR_M = 'singular-M'
NOT_M = 'not-M'


def as_operator(matrix) -> StructuredOperator:
    """Wrap a dense or sparse matrix in the matching operator"""
    if isinstance(matrix, StructuredOperator):
        return matrix
    if sp.issparse(matrix):
        return SparseOperator(matrix)
    return DenseOperator(matrix)


def _as_factor(x, rows: int, name: str) -> np.ndarray:
    if x is None:
        return np.zeros((rows, 0))
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != rows:
        raise DimensionError(f"{name} must have {rows} rows, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ProblemDefinitionError(f"{name} contains non-finite entries")
    return arr


class NDREProblem:
    """
    Ẋ = -A·X - X·D + X·S·X + F·Gᵀ,  X(0) = Z01·Z02ᵀ

    A acts on n-vectors, D on p-vectors, S is p×n. The constant term and the
    initial value are only ever held through their factors.
    """

    def __init__(self, A, D, S, F, G, Z01=None, Z02=None,
                 name: str = 'custom', metadata: Optional[Dict] = None):
        self.A = as_operator(A)
        self.D = as_operator(D)
        self.S = S if isinstance(S, CouplingTerm) else CouplingTerm.from_matrix(S)
        self.name = name
        self.metadata = dict(metadata or {})

        n, p = self.A.n, self.D.n
        self.F = _as_factor(F, n, 'F')
        self.G = _as_factor(G, p, 'G')
        self.Z01 = _as_factor(Z01, n, 'Z01')
        self.Z02 = _as_factor(Z02, p, 'Z02')
        self._validate()

    def _validate(self):
        n, p = self.n, self.p
        if self.S.shape != (p, n):
            raise DimensionError(f"S must be {p}x{n}, got {self.S.shape}")
        if self.F.shape[1] != self.G.shape[1]:
            raise DimensionError(f"F has {self.F.shape[1]} columns but G has {self.G.shape[1]}")
        if self.Z01.shape[1] != self.Z02.shape[1]:
            raise DimensionError(f"Z01 has {self.Z01.shape[1]} columns but Z02 has {self.Z02.shape[1]}")
        if self.s > min(n, p):
            raise ProblemDefinitionError(f"rank of F·Gᵀ factors s={self.s} exceeds min(n, p)={min(n, p)}")

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def p(self) -> int:
        return self.D.n

    @property
    def s(self) -> int:
        return self.F.shape[1]

    @property
    def s0(self) -> int:
        return self.Z01.shape[1]

    @property
    def has_initial_value(self) -> bool:
        return self.s0 > 0 and low_rank_product_norm(self.Z01, self.Z02) > 0.0

    def q_norm(self) -> float:
        """‖F·Gᵀ‖_F"""
        return low_rank_product_norm(self.F, self.G)

    def structure(self) -> Dict[str, str]:
        return {
            'A': self.A.structure,
            'D': self.D.structure,
            'S': 'low-rank' if self.S.is_low_rank else 'matrix',
        }

    def with_initial_value(self, Z01, Z02) -> 'NDREProblem':
        return NDREProblem(self.A, self.D, self.S, self.F, self.G, Z01, Z02,
                           name=self.name, metadata=self.metadata)

    def dense_coefficients(self, max_dim: int = ORACLE_MAX_DIM) -> Dict[str, np.ndarray]:
        """Dense A, D, S, Q and X0 for oracle use"""
        if self.n + self.p > max_dim:
            raise OracleScaleError(f"n + p = {self.n + self.p} exceeds the oracle cap {max_dim}")
        return {
            'A': self.A.to_dense(max_dim),
            'D': self.D.to_dense(max_dim),
            'S': self.S.to_dense(max_dim),
            'Q': self.F @ self.G.T,
            'X0': self.Z01 @ self.Z02.T,
        }

    def describe(self) -> Dict:
        return {
            'name': self.name,
            'n': self.n,
            'p': self.p,
            's': self.s,
            's0': self.s0,
            'structure': self.structure(),
            **self.metadata,
        }


@dataclass(frozen=True)
class TransportParams:
    """Transport-theory NARE parameters"""

    n: int
    c: float = 0.5
    alpha: float = 0.5

    def __post_init__(self):
        if int(self.n) < 1:
            raise ProblemDefinitionError(f"transport size must be positive, got n={self.n}")
        if not 0.0 < self.c <= 1.0:
            raise ProblemDefinitionError(f"transport parameter c must lie in (0, 1], got {self.c}")
        if not 0.0 <= self.alpha < 1.0:
            raise ProblemDefinitionError(f"transport parameter alpha must lie in [0, 1), got {self.alpha}")


def gauss_legendre_01(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre rule on [0, 1]

    Nodes are returned in descending order with weights normalised to sum 1.
    Up to GOLUB_WELSCH_MAX points the rule comes from the eigendecomposition
    of the symmetric Jacobi matrix; larger rules use scipy's asymptotic nodes.

    Args:
        n: Number of quadrature points

    Returns:
        Tuple of (nodes, weights)
    """
    n = int(n)
    if n < 1:
        raise ProblemDefinitionError(f"quadrature size must be positive, got {n}")
    if n == 1:
        return np.array([0.5]), np.array([1.0])

    if n <= GOLUB_WELSCH_MAX:
        k = np.arange(1, n)
        off_diagonal = k / np.sqrt(4.0 * k * k - 1.0)
        x, vectors = sla.eigh_tridiagonal(np.zeros(n), off_diagonal)
        w = 2.0 * vectors[0, :] ** 2
    else:
        x, w = scipy.special.roots_legendre(n)

    nodes = 0.5 * (x + 1.0)
    weights = w / np.sum(w)
    order = np.argsort(nodes)[::-1]
    return nodes[order], weights[order]


def transport_coefficients(params: TransportParams) -> Dict[str, np.ndarray]:
    """δ, γ, q and the quadrature rule of the transport NARE"""
    omega, weights = gauss_legendre_01(params.n)
    delta = 1.0 / (params.c * omega * (1.0 + params.alpha))
    gamma = 1.0 / (params.c * omega * (1.0 - params.alpha))
    q = weights / (2.0 * omega)
    return {'omega': omega, 'weights': weights, 'delta': delta, 'gamma': gamma, 'q': q}


def build_transport_problem(params: TransportParams, Z01=None, Z02=None) -> NDREProblem:
    """
    Transport-theory NDRE with A = Δ - e·qᵀ, D = Γ - q·eᵀ, S = q·qᵀ, F = G = e

    Args:
        params: Validated transport parameters
        Z01, Z02: Optional initial-value factors (zero initial value by default)

    Returns:
        NDREProblem with rank-one structured operators
    """
    coeffs = transport_coefficients(params)
    n = params.n
    e = np.ones(n)
    q = coeffs['q']

    try:
        A = DiagPlusRankOne(coeffs['delta'], e, q)
        D = DiagPlusRankOne(coeffs['gamma'], q, e)
    except SingularOperatorError as e_sing:
        logger.error(f"Error building transport operators for {params}: {e_sing}")
        raise

    S = CouplingTerm.from_factors(q.reshape(-1, 1), q.reshape(-1, 1))
    metadata = {'family': 'transport', 'c': params.c, 'alpha': params.alpha}
    logger.debug(f"Transport problem n={n}, c={params.c}, alpha={params.alpha}")
    return NDREProblem(A, D, S, e, e, Z01, Z02, name='transport', metadata=metadata)


def guo_matrix(n: int) -> sp.csr_matrix:
    """2 on the diagonal, -1 on the superdiagonal and -1 in entry (n, 1)"""
    M = sp.diags([2.0 * np.ones(n), -np.ones(n - 1)], [0, 1], shape=(n, n), format='lil')
    M[n - 1, 0] = -1.0
    return M.tocsr()


def build_guo_problem(n: int, rng_seed: int = 0) -> NDREProblem:
    """
    Cyclic bidiagonal test problem with S = diag(1, 1, 0, ..., 0)

    F and G are n×2 with entries uniform on [0, 1) drawn from the seeded generator.
    """
    n = int(n)
    if n < 3:
        raise ProblemDefinitionError(f"guo problem needs n >= 3, got {n}")

    A = SparseOperator(guo_matrix(n))
    D = SparseOperator(guo_matrix(n))

    selector = np.zeros((n, 2))
    selector[0, 0] = 1.0
    selector[1, 1] = 1.0
    S = CouplingTerm.from_factors(selector, selector.copy())

    rng = np.random.default_rng(rng_seed)
    F = rng.random((n, 2))
    G = rng.random((n, 2))
    metadata = {'family': 'guo', 'seed': int(rng_seed)}
    return NDREProblem(A, D, S, F, G, name='guo', metadata=metadata)


def smw_apply_inverse(op: DiagPlusRankOne, x) -> np.ndarray:
    """
    (diag(d) - u·vᵀ)⁻¹·x by the Sherman-Morrison formula, O(n) per column

    Args:
        op: Rank-one corrected diagonal operator
        x: Vector or n×k block

    Returns:
        Solution with the shape of x
    """
    x = np.asarray(x, dtype=float)
    vector = x.ndim == 1
    block = x.reshape(-1, 1) if vector else x
    if block.shape[0] != op.n:
        raise DimensionError(f"operator of size {op.n} applied to {block.shape[0]} rows")

    d, u, v = op.d, op.u, op.v
    dinv_x = block / d[:, None]
    dinv_u = u / d
    denominator = 1.0 - v @ dinv_u
    if sherman_morrison_vanishes(denominator, d):
        raise SingularOperatorError(f"Sherman-Morrison denominator vanishes ({denominator:.3e})")

    out = dinv_x + np.outer(dinv_u, v @ dinv_x) / denominator
    return out[:, 0] if vector else out


def validate_m_matrix(L: np.ndarray, tol: float = 1e-12, max_dim: int = ORACLE_MAX_DIM) -> str:
    """
    Classify L as a nonsingular M-matrix, a singular M-matrix, or neither

    Writes L = s·I - H with s the largest diagonal entry and compares s with ρ(H).
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionError(f"M-matrix check needs a square matrix, got shape {L.shape}")
    if L.shape[0] > max_dim:
        raise OracleScaleError(f"M-matrix check on {L.shape[0]} rows exceeds the oracle cap {max_dim}")

    off_diagonal = L - np.diag(np.diag(L))
    if np.any(off_diagonal > 0.0):
        return NOT_M

    s = float(np.max(np.diag(L)))
    H = s * np.eye(L.shape[0]) - L
    rho = float(np.max(np.abs(np.linalg.eigvals(H))))
    scale = max(abs(s), 1.0)

    if s > rho + tol * scale:
        return NONSINGULAR_M
    if abs(s - rho) <= tol * scale:
        return SINGULAR_M
    return NOT_M


def transport_matrix(source, max_dim: int = ORACLE_MAX_DIM) -> np.ndarray:
    """Dense 𝓛 = [[D, -S], [-Q, A]] of a transport parameter set or any problem"""
    problem = build_transport_problem(source) if isinstance(source, TransportParams) else source
    dense = problem.dense_coefficients(max_dim)
    return np.block([[dense['D'], -dense['S']],
                     [-dense['Q'], dense['A']]])


def _read_matrix(path: str, sparse_ok: bool):
    if path.endswith('.mtx') or path.endswith('.mtx.gz'):
        M = scipy.io.mmread(path)
        if sp.issparse(M):
            return sp.csr_matrix(M) if sparse_ok else M.toarray()
        return np.asarray(M, dtype=float)
    return np.loadtxt(path, ndmin=2)


def load_problem_files(a_path: str, d_path: str, s_path: str, f_path: str, g_path: str,
                       z01_path: Optional[str] = None, z02_path: Optional[str] = None) -> NDREProblem:
    """
    Build a problem from Matrix Market operators and dense text arrays

    Args:
        a_path, d_path: Matrix Market files for A and D (sparse or dense)
        s_path: S as Matrix Market or whitespace-separated text
        f_path, g_path: Dense text arrays for F and G
        z01_path, z02_path: Optional initial-value factors

    Returns:
        NDREProblem
    """
    try:
        A = _read_matrix(a_path, sparse_ok=True)
        D = _read_matrix(d_path, sparse_ok=True)
        S = _read_matrix(s_path, sparse_ok=True)
        F = np.loadtxt(f_path, ndmin=2)
        G = np.loadtxt(g_path, ndmin=2)
        Z01 = np.loadtxt(z01_path, ndmin=2) if z01_path else None
        Z02 = np.loadtxt(z02_path, ndmin=2) if z02_path else None
    except (OSError, ValueError) as e:
        logger.error(f"Error reading problem files: {e}")
        raise ProblemDefinitionError(f"could not read problem files: {e}")

    metadata = {'family': 'file', 'source': os.path.dirname(os.path.abspath(a_path))}
    return NDREProblem(A, D, S, F, G, Z01, Z02, name='file', metadata=metadata)
