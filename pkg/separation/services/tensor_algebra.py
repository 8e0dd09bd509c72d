"""
Vectorization and N²×N² operator algebra used by both cost models.

Provides the column-stacking map cs and its inverse, the intertwiner T
(cs(Aᵀ) = T·cs(A)), the diagonal projection P, the off-diagonal selector P̃,
Kronecker products and block-diagonal direct sums.

Index convention:
    Documentation uses 1-based indices: entry A_ij of an N×N matrix sits at
    position i + N(j−1) of cs(A). Code is 0-based; the conversion lives only in
    vec_index() and matrix_index() below.

Notes:
    - All operators are materialized as dense float64 matrices (N ≤ 20 gives
      systems of at most 400×400).
    - T, P and P̃ are 0/1 matrices built by index placement, so products with
      them are exact permutations/selections of entries.
    - Returned arrays are read-only; values are safe to share across threads.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from separation.exceptions import DimensionError


class OperatorKind(str, Enum):
    INTERTWINER = "intertwiner"
    DIAG_PROJECTION = "diag_projection"
    OFFDIAG_SELECTOR = "offdiag_selector"
    GENERAL = "general"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def vec_index(i: int, j: int, n: int) -> int:
    """0-based slot of entry (i, j) in cs(A); the 1-based i + N(j−1) rule."""
    return i + n * j


def matrix_index(k: int, n: int) -> Tuple[int, int]:
    """Inverse of vec_index: the (i, j) entry stored at 0-based slot k."""
    return k % n, k // n


def diagonal_slots(n: int) -> np.ndarray:
    """0-based slots of the diagonal entries, i.e. N(i−1)+i in 1-based terms."""
    return np.array([vec_index(i, i, n) for i in range(n)], dtype=int)


def offdiagonal_slots(n: int) -> np.ndarray:
    """0-based slots of the off-diagonal entries, in increasing order."""
    diag = set(diagonal_slots(n).tolist())
    return np.array([k for k in range(n * n) if k not in diag], dtype=int)


@dataclass(frozen=True)
class VecMat:
    """Column-stacked image of an N×N matrix."""

    dim: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 1 or self.data.shape[0] != self.dim * self.dim:
            raise DimensionError(
                f"VecMat of dim {self.dim} needs {self.dim * self.dim} entries, got shape {self.data.shape}"
            )

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BigOperator:
    """Dense N²×N² (or selector-shaped) operator with its structural kind."""

    dim: int
    matrix: np.ndarray
    kind: OperatorKind = OperatorKind.GENERAL

    def __matmul__(self, other):
        if isinstance(other, VecMat):
            return VecMat(self.dim, _frozen(self.matrix @ other.data))
        if isinstance(other, BigOperator):
            return self.matrix @ other.matrix
        return self.matrix @ other


def _check_order(n: int) -> None:
    if int(n) != n or n < 1:
        raise DimensionError(f"Operator order must be a positive integer, got {n}")


def cs(a: np.ndarray) -> VecMat:
    """
    Column-stacking vectorization.

    Args:
        a: square N×N real matrix.

    Returns:
        VecMat whose entry i + N(j−1) (1-based) equals a[i, j].

    Raises:
        DimensionError: input is not a square matrix.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cs expects a square matrix, got shape {a.shape}")
    return VecMat(a.shape[0], _frozen(a.reshape(-1, order="F").copy()))


def cs_inv(v) -> np.ndarray:
    """
    Inverse of cs: rebuild the N×N matrix from its column-stacked vector.

    Raises:
        DimensionError: length is not a perfect square.
    """
    data = v.data if isinstance(v, VecMat) else np.asarray(v, dtype=float)
    if data.ndim != 1:
        raise DimensionError(f"cs_inv expects a vector, got shape {data.shape}")
    n = int(round(np.sqrt(data.shape[0])))
    if n * n != data.shape[0] or n == 0:
        raise DimensionError(f"Vector length {data.shape[0]} is not a positive perfect square")
    return data.reshape((n, n), order="F").copy()


def build_T(n: int) -> BigOperator:
    """Intertwiner: the symmetric permutation with T·cs(A) = cs(Aᵀ) and T·T = I."""
    _check_order(n)
    matrix = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            matrix[vec_index(j, i, n), vec_index(i, j, n)] = 1.0
    return BigOperator(n, _frozen(matrix), OperatorKind.INTERTWINER)


def build_P(n: int) -> BigOperator:
    """Diagonal projection with ones at the N diagonal-entry slots."""
    _check_order(n)
    matrix = np.zeros((n * n, n * n))
    slots = diagonal_slots(n)
    matrix[slots, slots] = 1.0
    return BigOperator(n, _frozen(matrix), OperatorKind.DIAG_PROJECTION)


def build_P_tilde(n: int) -> BigOperator:
    """
    (N²−N)×N² selector of the off-diagonal coordinates.

    Obtained by deleting the diagonal-entry rows from I_{N²}; the surviving rows
    keep their order, so P̃·P̃ᵀ = I_{N²−N} and P̃ᵀ·P̃ = I − P.
    """
    _check_order(n)
    matrix = np.eye(n * n)[offdiagonal_slots(n)]
    return BigOperator(n, _frozen(matrix), OperatorKind.OFFDIAG_SELECTOR)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product a ⊗ b (block (i, j) equals a_ij·b)."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def direct_sum(blocks: Sequence[np.ndarray], n: Optional[int] = None) -> np.ndarray:
    """
    Block-diagonal arrangement V^(1) ⊕ … ⊕ V^(m).

    Args:
        blocks: equally sized square blocks, placed along the diagonal in order.
        n: when given, exactly n blocks of shape n×n are required (the layout of
            ⊕_i V^(i) in the Newton system).

    Raises:
        DimensionError: no blocks, unequal or non-square blocks, or a count/size
            mismatch against n.
    """
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    if not blocks:
        raise DimensionError("direct_sum needs at least one block")
    size = blocks[0].shape[0]
    for index, block in enumerate(blocks):
        if block.shape != (size, size):
            raise DimensionError(
                f"direct_sum expects square blocks of shape ({size}, {size}); block {index} has shape {block.shape}"
            )
    if n is not None and (len(blocks) != n or size != n):
        raise DimensionError(
            f"direct_sum expects {n} blocks of shape ({n}, {n}); got {len(blocks)} blocks of shape ({size}, {size})"
        )
    return block_diag(*blocks)
