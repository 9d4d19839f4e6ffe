"""Dense matrix primitives and the convolution operators used by the factorization.

Matrices are 2-D float64 ``numpy`` arrays and pattern tensors are 3-D arrays
indexed ``O[d, j, lag]``. Out-of-range time indices contribute zero in both
convolution directions, which makes :func:`conv_forward` and
:func:`conv_transpose` exact adjoints of each other.
"""

from __future__ import annotations

import numpy as np


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def as_tensor3(O, name: str = "tensor") -> np.ndarray:
    O = np.asarray(O, dtype=np.float64)
    if O.ndim != 3 or min(O.shape) < 1:
        raise ValueError(f"{name} must be a non-empty 3-D array (D, J, L), got shape {O.shape}")
    if not np.all(np.isfinite(O)):
        raise ValueError(f"{name} has non-finite entries")
    return O


def shift_columns(M: np.ndarray, lag: int) -> np.ndarray:
    """Shift the columns of ``M`` by ``lag`` positions, zero filling.

    Positive ``lag`` delays (moves right), negative advances (moves left).

    >>> shift_columns(np.array([[1., 2., 3.]]), 1)
    array([[0., 1., 2.]])
    """
    M = np.asarray(M, dtype=np.float64)
    T = M.shape[1]
    if abs(lag) >= T:
        raise ValueError(f"|lag|={abs(lag)} must be smaller than the number of columns ({T})")
    out = np.zeros_like(M)
    if lag > 0:
        out[:, lag:] = M[:, :-lag]
    elif lag < 0:
        out[:, :lag] = M[:, -lag:]
    else:
        out[:] = M
    return out


def _check_pair(O: np.ndarray, M: np.ndarray, axis: int, what: str) -> None:
    if O.shape[axis] != M.shape[0]:
        raise ValueError(
            f"{what}: tensor has {O.shape[axis]} along axis {axis} but matrix has {M.shape[0]} rows"
        )


def conv_forward(O, H) -> np.ndarray:
    """Reconstruct ``X~[d, t] = sum_j sum_l O[d, j, l] * H[j, t - l]``.

    Parameters
    ----------
    O : array of shape (D, J, L)
        Pattern tensor.
    H : array of shape (J, T)
        Activation matrix. Columns before the start count as zero.

    Returns
    -------
    ndarray of shape (D, T)
    """
    O = as_tensor3(O, "O")
    H = as_matrix(H, "H")
    _check_pair(O, H, 1, "conv_forward")
    D, _, L = O.shape
    T = H.shape[1]
    out = np.zeros((D, T))
    for lag in range(min(L, T)):
        out[:, lag:] += O[:, :, lag] @ H[:, : T - lag]
    return out


def conv_transpose(O, X) -> np.ndarray:
    """Transposed convolution ``(j, t) -> sum_l sum_d O[d, j, l] * X[d, t + l]``.

    Columns past the right edge of ``X`` count as zero.
    """
    O = as_tensor3(O, "O")
    X = as_matrix(X, "X")
    _check_pair(O, X, 0, "conv_transpose")
    _, J, L = O.shape
    T = X.shape[1]
    out = np.zeros((J, T))
    for lag in range(min(L, T)):
        out[:, : T - lag] += O[:, :, lag].T @ X[:, lag:]
    return out


def frobenius_sq(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    R = A - B
    return float(np.sum(R * R))


def smoothing_matrix(T: int, L: int) -> np.ndarray:
    """Binary band matrix with ones where ``|i - j| < L``."""
    if T < 1 or L < 1:
        raise ValueError("T and L must be positive")
    idx = np.arange(T)
    return (np.abs(idx[:, None] - idx[None, :]) < L).astype(np.float64)


def band_smooth(M, L: int) -> np.ndarray:
    """Compute ``M @ smoothing_matrix(T, L)`` without forming the T x T matrix.

    Each output column is the sum of the input columns within ``L - 1`` of it.
    """
    M = np.asarray(M, dtype=np.float64)
    T = M.shape[1]
    w = min(L - 1, T - 1)
    csum = np.zeros((M.shape[0], T + 1))
    np.cumsum(M, axis=1, out=csum[:, 1:])
    idx = np.arange(T)
    hi = np.minimum(idx + w, T - 1) + 1
    lo = np.maximum(idx - w, 0)
    return csum[:, hi] - csum[:, lo]


def off_diagonal_ones(J: int) -> np.ndarray:
    """The J x J matrix of ones with a zero diagonal."""
    return np.ones((J, J)) - np.eye(J)
