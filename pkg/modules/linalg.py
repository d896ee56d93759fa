"""
Dense kernels shared by every other module: frames, SVD, projections and
Kronecker-restricted products.

vec convention is column stacking: entry (i, j) of an m1 x m2 grid sits at
linear index j * m1 + i.  Projectors U U^T are never materialised.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from modules.errors import DimensionMismatchError, IndexOutOfGridError, InputDomainError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-10


class EntryIndex(NamedTuple):
    i: int
    j: int


def vec_index(i: int, j: int, m1: int) -> int:
    return j * m1 + i


def check_finite(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise InputDomainError(f"{name} contains non-finite entries")
    return M


def index_arrays(indices: Sequence, m1: int, m2: int) -> Tuple[np.ndarray, np.ndarray]:
    """Split a sequence of EntryIndex (or (i, j) pairs) into validated row/col arrays."""
    if len(indices) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    arr = np.asarray([(int(a), int(b)) for a, b in indices], dtype=np.int64)
    rows, cols = arr[:, 0], arr[:, 1]
    bad = (rows < 0) | (rows >= m1) | (cols < 0) | (cols >= m2)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise IndexOutOfGridError(f"entry ({rows[k]}, {cols[k]}) outside the {m1}x{m2} grid")
    return rows, cols


@dataclass(frozen=True, eq=False)
class Frame:
    """Column-orthonormal m x R matrix (a point on the Stiefel manifold)."""

    columns: np.ndarray

    def __post_init__(self):
        cols = check_finite(self.columns, "frame").copy()
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.ndim != 2:
            raise DimensionMismatchError(f"frame must be 2-D, got shape {cols.shape}")
        m, r = cols.shape
        if not 1 <= r <= m:
            raise DimensionMismatchError(f"frame rank {r} must satisfy 1 <= R <= m = {m}")
        err = np.linalg.norm(cols.T @ cols - np.eye(r))
        if err > ORTHONORMAL_TOL:
            raise InputDomainError(f"frame columns are not orthonormal (||F^T F - I||_F = {err:.2e})")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def m(self) -> int:
        return self.columns.shape[0]

    @property
    def rank(self) -> int:
        return self.columns.shape[1]

    @classmethod
    def orthonormalize(cls, A: np.ndarray) -> "Frame":
        """Frame spanning the columns of A (QR with a positive-diagonal sign convention)."""
        A = check_finite(A, "matrix")
        if A.ndim == 1:
            A = A[:, None]
        q, r = np.linalg.qr(A)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        return cls(q * signs)

    def rotate(self, Q: np.ndarray) -> "Frame":
        return Frame.orthonormalize(self.columns @ Q)


def svd(M: np.ndarray, rank: Optional[int] = None) -> Tuple[Frame, np.ndarray, Frame]:
    """Thin SVD M = U diag(d) V^T, singular values non-increasing; truncated to `rank` when given."""
    M = check_finite(M, "matrix")
    if M.ndim != 2:
        raise DimensionMismatchError(f"svd expects a 2-D matrix, got shape {M.shape}")
    k = min(M.shape)
    if rank is not None and not 1 <= rank <= k:
        raise InputDomainError(f"rank {rank} must lie in [1, {k}]")
    u, d, vt = np.linalg.svd(M, full_matrices=False)
    if rank is not None:
        u, d, vt = u[:, :rank], d[:rank], vt[:rank]
    # re-orthonormalise to hold the frame tolerance on ill-conditioned inputs
    return Frame(_polish(u)), d, Frame(_polish(vt.T))


def _polish(Q: np.ndarray) -> np.ndarray:
    if np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])) <= ORTHONORMAL_TOL / 10:
        return Q
    q, r = np.linalg.qr(Q)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def projection_apply(F: Frame, M: np.ndarray, side: str = "left") -> np.ndarray:
    """Apply P = F F^T on the given side of M without forming P."""
    M = check_finite(M, "matrix")
    if M.ndim == 1:
        M = M[:, None]
    B = F.columns
    if side == "left":
        if M.shape[0] != F.m:
            raise DimensionMismatchError(f"left projection needs {F.m} rows, got {M.shape[0]}")
        return B @ (B.T @ M)
    if side == "right":
        if M.shape[1] != F.m:
            raise DimensionMismatchError(f"right projection needs {F.m} columns, got {M.shape[1]}")
        return (M @ B) @ B.T
    raise InputDomainError(f"side must be 'left' or 'right', got {side!r}")


def kron_restricted(U: Frame, V: Frame, row_indices: Sequence, col_indices: Sequence) -> np.ndarray:
    """Block of (P_V kron P_U) between two lists of grid entries.

    Entry ((i, j), (k, l)) equals P_U[i, k] * P_V[j, l], computed from the frames.
    """
    ri, rj = index_arrays(row_indices, U.m, V.m)
    ci, cj = index_arrays(col_indices, U.m, V.m)
    Ub, Vb = U.columns, V.columns
    pu = Ub[ri] @ Ub[ci].T
    pv = Vb[rj] @ Vb[cj].T
    return pu * pv
