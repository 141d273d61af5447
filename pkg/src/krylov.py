"""
Block Krylov Bases
Extended block Arnoldi and plain block Arnoldi with rank-revealing deflation
"""

import numpy as np
import scipy.linalg as sla
from typing import List, Optional, Tuple
import logging
import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from config import DEFLATION_TOL

from .exceptions import DimensionError
from .operators import StructuredOperator
from .projected_integrators import ProjectedNDRE

logger = logging.getLogger(__name__)


def _project_out(W: np.ndarray, blocks: List[np.ndarray], passes: int = 2) -> np.ndarray:
    """Block modified Gram-Schmidt of W against a list of orthonormal blocks"""
    for _ in range(passes):
        for Vk in blocks:
            if Vk.shape[1] == 0:
                continue
            W = W - Vk @ (Vk.T @ W)
    return W


def _deflated_columns(W: np.ndarray, reference: float, tol: float) -> List[int]:
    """Indices of the numerically independent columns of W, in their original order"""
    if W.shape[1] == 0 or reference == 0.0:
        return []
    _, R, P = sla.qr(W, mode='economic', pivoting=True)
    magnitudes = np.abs(np.diag(R))
    rank = int(np.sum(magnitudes > tol * reference))
    return sorted(P[:rank].tolist())


def extend_orthonormal(blocks: List[np.ndarray], parts: List[np.ndarray],
                       tol: float = DEFLATION_TOL) -> Tuple[np.ndarray, List[int], int]:
    """
    Orthonormalize candidate column groups against an existing basis

    Each group is projected against the basis and the groups before it,
    deflated by pivoted QR relative to its own largest raw column norm, and
    orthonormalized with an unpivoted QR so the group order is preserved.

    Returns:
        Tuple of (new orthonormal block, kept columns per group, dropped count)
    """
    n = parts[0].shape[0]
    accepted: List[np.ndarray] = []
    kept: List[int] = []
    dropped = 0

    for part in parts:
        if part.shape[1] == 0:
            kept.append(0)
            continue
        reference = float(np.max(np.linalg.norm(part, axis=0)))
        W = _project_out(part, blocks + accepted)
        keep = _deflated_columns(W, reference, tol)
        dropped += part.shape[1] - len(keep)
        kept.append(len(keep))
        if not keep:
            continue
        Q, _ = sla.qr(W[:, keep], mode='economic')
        # one more pass against the earlier blocks
        Q = _project_out(Q, blocks + accepted, passes=1)
        Q, _ = sla.qr(Q, mode='economic')
        accepted.append(Q)

    block = np.hstack(accepted) if accepted else np.zeros((n, 0))
    return block, kept, dropped


class BlockKrylovState:
    """
    Orthonormal blocks V_1 … V_{m+1} with the projection T̄_m of the operator

    After m steps `blocks` holds m+1 blocks; the basis of the projected
    problem is the first m of them and the last one carries T_{m+1,m}.
    """

    method = 'abstract'
    nominal_factor = 1

    def __init__(self, op: StructuredOperator, start_width: int, tol: float = DEFLATION_TOL,
                 track_inverse: bool = False):
        self.op = op
        self.n = op.n
        self.tol = tol
        self.track_inverse = track_inverse
        self.start_width = start_width
        self.blocks: List[np.ndarray] = []
        self.forward_widths: List[int] = []
        self.T_bar = np.zeros((0, 0))
        self.L_bar = np.zeros((0, 0)) if track_inverse else None
        self.start_coords: Optional[np.ndarray] = None
        self.deflation_log: List[Tuple[int, int]] = []
        self.breakdown = False
        self._basis_cache = None

    @property
    def block_width(self) -> int:
        return self.nominal_factor * self.start_width

    @property
    def m(self) -> int:
        return max(len(self.blocks) - 1, 0)

    @property
    def widths(self) -> List[int]:
        return [b.shape[1] for b in self.blocks]

    def dim(self, m: Optional[int] = None) -> int:
        m = self.m if m is None else m
        return int(sum(self.widths[:m]))

    @property
    def basis(self) -> np.ndarray:
        """𝒱_m as an n×k matrix"""
        if self._basis_cache is None or self._basis_cache.shape[1] != self.dim():
            if self.m == 0:
                self._basis_cache = np.zeros((self.n, 0))
            else:
                self._basis_cache = np.hstack(self.blocks[:self.m])
        return self._basis_cache

    @property
    def full_basis(self) -> np.ndarray:
        """𝒱_{m+1}"""
        if not self.blocks:
            return np.zeros((self.n, 0))
        return np.hstack(self.blocks)

    @property
    def next_block(self) -> np.ndarray:
        return self.blocks[self.m]

    @property
    def T_m(self) -> np.ndarray:
        k = self.dim()
        return self.T_bar[:k, :k]

    @property
    def T_next(self) -> np.ndarray:
        """T_{m+1,m}: last block row of T̄_m restricted to the last block column"""
        if self.m == 0:
            return np.zeros((self.widths[0] if self.blocks else 0, 0))
        k_prev = self.dim(self.m - 1)
        k = self.dim()
        return self.T_bar[k:, k_prev:k]

    @property
    def last_width(self) -> int:
        return self.widths[self.m - 1] if self.m else 0

    def orthonormality_error(self) -> float:
        V = self.full_basis
        return float(np.linalg.norm(V.T @ V - np.eye(V.shape[1]), 'fro'))

    def truncate(self, m: int) -> 'BlockKrylovState':
        """Roll the state back to step m, as if it had stopped there"""
        if not 0 <= m <= self.m:
            raise DimensionError(f"cannot truncate a state at step {self.m} to step {m}")
        if m == self.m:
            return self
        rows, cols = self.dim(m + 1), self.dim(m)
        self.T_bar = self.T_bar[:rows, :cols]
        if self.L_bar is not None:
            self.L_bar = self.L_bar[:rows, :cols]
        self.blocks = self.blocks[:m + 1]
        self.forward_widths = self.forward_widths[:m + 1]
        self.deflation_log = [(step, dropped) for step, dropped in self.deflation_log if step <= m]
        self.breakdown = self.blocks[-1].shape[1] == 0
        self._basis_cache = None
        return self

    def _start(self, parts: List[np.ndarray], forward_count: int):
        block, kept, dropped = extend_orthonormal([], parts, self.tol)
        if dropped:
            self.deflation_log.append((0, dropped))
            logger.warning(f"{self.method}: start block deflated by {dropped} column(s)")
        self.blocks.append(block)
        self.forward_widths.append(kept[0])
        self.start_coords = block.T @ parts[0]
        if block.shape[1] == 0:
            self.breakdown = True
        self.T_bar = np.zeros((block.shape[1], 0))
        if self.track_inverse:
            self.L_bar = np.zeros((block.shape[1], 0))

    def _append(self, parts: List[np.ndarray], AV: np.ndarray, AinvV: Optional[np.ndarray]):
        step = self.m + 1
        block, kept, dropped = extend_orthonormal(self.blocks, parts, self.tol)
        if dropped:
            self.deflation_log.append((step, dropped))
            logger.warning(f"{self.method}: step {step} deflated {dropped} column(s)")

        self.blocks.append(block)
        self.forward_widths.append(kept[0])
        self._basis_cache = None

        basis = self.full_basis
        w = AV.shape[1]
        rows, cols = self.T_bar.shape
        self.T_bar = np.pad(self.T_bar, ((0, block.shape[1]), (0, w)))
        self.T_bar[:, cols:] = basis.T @ AV
        if self.track_inverse and AinvV is not None:
            self.L_bar = np.pad(self.L_bar, ((0, block.shape[1]), (0, w)))
            self.L_bar[:, cols:] = basis.T @ AinvV

        if block.shape[1] == 0:
            self.breakdown = True
            logger.info(f"{self.method}: breakdown at step {step}, invariant subspace of dimension {self.dim()}")


class EBAState(BlockKrylovState):
    """Extended block Arnoldi state for K_m(A, V) = span{V, A⁻¹V, AV, A⁻²V, …}"""

    method = 'extended-block-arnoldi'
    nominal_factor = 2


class BlockArnoldiState(BlockKrylovState):
    """Block Arnoldi state for span{V, AV, A²V, …}"""

    method = 'block-arnoldi'


def _starting_block(op: StructuredOperator, V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V.reshape(-1, 1)
    if V.shape[0] != op.n:
        raise DimensionError(f"starting block has {V.shape[0]} rows, operator size is {op.n}")
    return V


def eba_init(op: StructuredOperator, V, tol: float = DEFLATION_TOL,
             track_inverse: bool = False) -> EBAState:
    """
    First extended block: V₁ = orth([V, A⁻¹V])

    Raises SingularOperatorError when A⁻¹ is unavailable; the caller is
    expected to switch to block Arnoldi.
    """
    V = _starting_block(op, V)
    state = EBAState(op, V.shape[1], tol, track_inverse)
    state._start([V, op.apply_inverse(V)], V.shape[1])
    return state


def eba_step(state: EBAState, op: Optional[StructuredOperator] = None) -> EBAState:
    """Grow the extended basis by [A·V_j⁽¹⁾, A⁻¹·V_j⁽²⁾]"""
    op = op or state.op
    if state.breakdown:
        logger.debug("eba_step called after breakdown; state unchanged")
        return state
    Vj = state.next_block
    w1 = state.forward_widths[state.m]

    AV = op.apply(Vj)
    AinvV = op.apply_inverse(Vj) if state.track_inverse else None
    inverse_part = AinvV[:, w1:] if AinvV is not None else op.apply_inverse(Vj[:, w1:])
    state._append([AV[:, :w1], inverse_part], AV, AinvV)
    return state


def block_arnoldi_init(op: StructuredOperator, V, tol: float = DEFLATION_TOL) -> BlockArnoldiState:
    """First block: V₁ = orth(V)"""
    V = _starting_block(op, V)
    state = BlockArnoldiState(op, V.shape[1], tol)
    state._start([V], V.shape[1])
    return state


def block_arnoldi_step(state: BlockArnoldiState,
                       op: Optional[StructuredOperator] = None) -> BlockArnoldiState:
    """Grow the basis by A·V_j; forward products only"""
    op = op or state.op
    if state.breakdown:
        logger.debug("block_arnoldi_step called after breakdown; state unchanged")
        return state
    AV = op.apply(state.next_block)
    state._append([AV], AV, None)
    return state


def krylov_step(state: BlockKrylovState) -> BlockKrylovState:
    if isinstance(state, EBAState):
        return eba_step(state)
    return block_arnoldi_step(state)


def projected_matrices(stateA: BlockKrylovState, stateD: BlockKrylovState, problem) -> ProjectedNDRE:
    """
    Galerkin projection of the NDRE onto 𝒱_m (A side) and 𝒲_m (D side)

    The D-side state is built on (Dᵀ, G), so T_D and T_{m+1,m}^D are the
    transposes of that process's projections.
    """
    if stateA.n != problem.n or stateD.n != problem.p:
        raise DimensionError(
            f"bases of sizes ({stateA.n}, {stateD.n}) do not match problem ({problem.n}, {problem.p})")

    V = stateA.basis
    W = stateD.basis
    S_m = W.T @ problem.S.apply(V)
    F_m = V.T @ problem.F
    G_m = W.T @ problem.G
    Y0 = (V.T @ problem.Z01) @ (W.T @ problem.Z02).T

    return ProjectedNDRE(
        T_A=stateA.T_m.copy(),
        T_D=stateD.T_m.T.copy(),
        S_m=S_m,
        F_m=F_m,
        G_m=G_m,
        Y0=Y0,
        T_next_A=stateA.T_next.copy(),
        T_next_D=stateD.T_next.T.copy(),
    )
