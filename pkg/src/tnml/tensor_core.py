"""Dense tensor arithmetic over real64 and complex128 scalars.

Tensors are plain numpy arrays in row-major (C) layout. This module adds the
validation the rest of the package relies on: paired extents must match, the
two operands of a contraction must share a scalar kind, permutations must be
permutations, and SVD inputs must be finite. Truncation of singular values
follows `TruncParams`.

SVDs use LAPACK through scipy (divide-and-conquer `gesdd`, falling back to
`gesvd` if it fails to converge).
"""

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .exceptions import NumericalError, TensorError
from .models import ScalarKind, TruncParams

Tensor = NDArray[Any]

# Singular values below NOISE_FLOOR * s_1 never count towards the kept rank
NOISE_FLOOR = 1e-14

_DTYPES = {ScalarKind.REAL: np.float64, ScalarKind.COMPLEX: np.complex128}


def scalar_kind_of(t: Tensor) -> ScalarKind:
    """Return the scalar kind of a tensor.

    Raises:
        TensorError: If the dtype is neither float64 nor complex128.
    """
    if t.dtype == np.float64:
        return ScalarKind.REAL
    if t.dtype == np.complex128:
        return ScalarKind.COMPLEX
    raise TensorError(f"unsupported dtype {t.dtype}; expected float64 or complex128")


def as_tensor(data: Any, kind: ScalarKind = ScalarKind.REAL) -> Tensor:
    """Build a contiguous tensor of the given scalar kind.

    Args:
        data: Anything numpy can turn into an array.
        kind: Scalar field of the result.

    Returns:
        A C-contiguous float64 or complex128 array.

    Raises:
        TensorError: If any extent is zero.
    """
    arr = np.array(data, dtype=_DTYPES[kind], order="C")
    if any(extent < 1 for extent in arr.shape):
        raise TensorError(f"all extents must be >= 1, got shape {arr.shape}")
    return arr


def contract(a: Tensor, b: Tensor, pairs: Sequence[tuple[int, int]]) -> Tensor:
    """Sum over paired indices of two tensors.

    Free indices of `a` come first, then free indices of `b`, each in their
    original relative order. An empty `pairs` gives the outer product.

    Args:
        a: First operand.
        b: Second operand (same scalar kind as `a`).
        pairs: (index of a, index of b) pairs to contract.

    Returns:
        Tensor of order a.ndim + b.ndim - 2 * len(pairs).

    Raises:
        TensorError: On kind mismatch, out-of-range or repeated indices, or
            extent mismatch.

    Example:
        >>> contract(as_tensor([[1, 2], [3, 4]]), as_tensor([1, 1]), [(1, 0)])
        array([3., 7.])
    """
    if scalar_kind_of(a) != scalar_kind_of(b):
        raise TensorError("cannot contract real and complex tensors together")
    axes_a = [p[0] for p in pairs]
    axes_b = [p[1] for p in pairs]
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise TensorError(f"repeated index in contraction pairs {list(pairs)}")
    for ia, ib in pairs:
        if not (0 <= ia < a.ndim) or not (0 <= ib < b.ndim):
            raise TensorError(f"index pair ({ia}, {ib}) out of range for orders {a.ndim}, {b.ndim}")
        if a.shape[ia] != b.shape[ib]:
            raise TensorError(
                f"extent mismatch on pair ({ia}, {ib}): {a.shape[ia]} != {b.shape[ib]}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def permute(a: Tensor, perm: Sequence[int]) -> Tensor:
    """Reorder the indices of a tensor.

    Args:
        a: Input tensor.
        perm: New order; index k of the result is index perm[k] of `a`.

    Returns:
        C-contiguous permuted copy.

    Raises:
        TensorError: If `perm` is not a permutation of 0..order-1.
    """
    if sorted(perm) != list(range(a.ndim)):
        raise TensorError(f"{list(perm)} is not a permutation of 0..{a.ndim - 1}")
    return np.ascontiguousarray(np.transpose(a, perm))


def inverse_permutation(perm: Sequence[int]) -> list[int]:
    """Return the permutation that undoes `perm`."""
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return inv


def frobenius_norm(t: Tensor) -> float:
    """Square root of the sum of squared magnitudes of all entries."""
    return float(np.linalg.norm(t.ravel()))


@dataclass(frozen=True)
class SvdResult:
    """Truncated singular value decomposition of a matricized tensor.

    `u` has the row indices of the input followed by the new bond index; `v`
    has the new bond index followed by the column indices.

    Attributes:
        u: Left factor with orthonormal columns.
        s: Kept singular values, descending.
        v: Right factor with orthonormal rows.
        discarded_weight: Sum of squared truncated singular values.
        kept_rank: Number of kept singular values.
        spectrum: Full singular value spectrum before truncation.
    """

    u: Tensor
    s: NDArray[np.float64]
    v: Tensor
    discarded_weight: float
    kept_rank: int
    spectrum: NDArray[np.float64]


def truncation_rank(spectrum: NDArray[np.float64], trunc: TruncParams | None) -> int:
    """Number of singular values kept under a truncation rule.

    Values below NOISE_FLOOR * s_1 and values with s_k / s_1 < cutoff are
    dropped, the result is capped at max_rank and raised to min_rank (never
    beyond the spectrum length). `trunc=None` keeps everything.

    Args:
        spectrum: Singular values in descending order.
        trunc: Truncation rule, or None for no truncation.

    Returns:
        The kept rank, at least 1.
    """
    full = len(spectrum)
    if trunc is None:
        return full
    s1 = float(spectrum[0]) if full else 0.0
    if s1 <= 0.0:
        significant = 0
    else:
        threshold = max(trunc.cutoff, NOISE_FLOOR) * s1
        significant = int(np.count_nonzero(spectrum >= threshold))
    rank = min(significant, trunc.max_rank)
    rank = max(rank, trunc.min_rank)
    return max(1, min(rank, full))


def _lapack_svd(mat: Tensor) -> tuple[Tensor, NDArray[np.float64], Tensor]:
    try:
        u, s, vh = scipy.linalg.svd(
            mat, full_matrices=False, check_finite=False, lapack_driver="gesdd"
        )
    except np.linalg.LinAlgError:
        try:
            u, s, vh = scipy.linalg.svd(
                mat, full_matrices=False, check_finite=False, lapack_driver="gesvd"
            )
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"SVD failed to converge on a {mat.shape} matrix") from e
    return u, s, vh


def svd(
    t: Tensor,
    row_axes: Sequence[int],
    col_axes: Sequence[int],
    trunc: TruncParams | None = None,
) -> SvdResult:
    """Singular value decomposition of a tensor viewed as a matrix.

    Args:
        t: Tensor to factor.
        row_axes: Indices grouped into the row index (in this order).
        col_axes: Indices grouped into the column index (in this order).
        trunc: Truncation rule; None keeps the full rank.

    Returns:
        SvdResult with u of shape (*row extents, k) and v of shape
        (k, *col extents).

    Raises:
        TensorError: If an index set is empty, the sets do not partition the
            indices, or `t` has non-finite values.
        NumericalError: If LAPACK fails to converge.
    """
    if not row_axes or not col_axes:
        raise TensorError("row and column index sets must both be non-empty")
    if sorted([*row_axes, *col_axes]) != list(range(t.ndim)):
        raise TensorError(
            f"row {list(row_axes)} and column {list(col_axes)} indices must partition "
            f"0..{t.ndim - 1}"
        )
    if not np.all(np.isfinite(t)):
        raise TensorError("SVD input contains non-finite values")

    row_shape = [t.shape[i] for i in row_axes]
    col_shape = [t.shape[i] for i in col_axes]
    mat = permute(t, [*row_axes, *col_axes]).reshape(
        int(np.prod(row_shape)), int(np.prod(col_shape))
    )
    u, s, vh = _lapack_svd(mat)

    k = truncation_rank(s, trunc)
    discarded = float(np.sum(s[k:] ** 2))
    return SvdResult(
        u=np.ascontiguousarray(u[:, :k]).reshape(*row_shape, k),
        s=s[:k].copy(),
        v=np.ascontiguousarray(vh[:k, :]).reshape(k, *col_shape),
        discarded_weight=discarded,
        kept_rank=k,
        spectrum=s,
    )
