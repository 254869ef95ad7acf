"""
numerics_service.py
-------------------
Dense linear-algebra kernels the rest of the package builds on.

  - SPD log-determinant and solve through Cholesky (single matrix and stacks)
  - singular values
  - projection of matrix columns onto the unit sphere, plus its backward pass

Matrices are plain float64 ``numpy`` arrays; features are stored column-wise
(d x n), one sample per column.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from app.core.errors import ConvergenceFailure, DimensionMismatch, NotSpd

DenseMatrix = NDArray[np.float64]

SYMMETRY_RTOL = 1e-10
SPHERE_FLOOR = 1e-12


# ──────────────────────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────────────────────
def as_matrix(M: ArrayLike) -> DenseMatrix:
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def _symmetrized(M: ArrayLike) -> DenseMatrix:
    """Check symmetry to a relative tolerance, then return (M + M^T) / 2."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {M.shape}")
    Mt = np.swapaxes(M, -1, -2)
    if M.size:
        scale = max(float(np.max(np.abs(M))), 1.0)
        if float(np.max(np.abs(M - Mt))) > SYMMETRY_RTOL * scale:
            raise NotSpd("matrix is not symmetric within tolerance")
    return 0.5 * (M + Mt)


# ──────────────────────────────────────────────────────────────────────────────
# Public API
# ──────────────────────────────────────────────────────────────────────────────
def logdet_spd(M: ArrayLike) -> float:
    """log det M = 2 * sum(log diag(L)) for the Cholesky factor L of an SPD matrix."""
    sym = _symmetrized(as_matrix(M))
    try:
        L = scipy.linalg.cholesky(sym, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotSpd(f"Cholesky factorization failed: {exc}") from exc
    return float(2.0 * np.sum(np.log(np.diag(L))))


def logdet_spd_batch(Ms: ArrayLike) -> NDArray[np.float64]:
    """Log-determinants of a stack of SPD matrices with shape (m, d, d)."""
    sym = _symmetrized(Ms)
    try:
        L = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise NotSpd(f"batched Cholesky factorization failed: {exc}") from exc
    return 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


def spd_solve(M: ArrayLike, B: ArrayLike) -> DenseMatrix:
    """Solve M X = B for SPD M."""
    sym = _symmetrized(as_matrix(M))
    B = np.asarray(B, dtype=np.float64)
    if B.shape[0] != sym.shape[0]:
        raise DimensionMismatch(f"cannot solve {sym.shape} system against {B.shape}")
    try:
        factor = scipy.linalg.cho_factor(sym, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotSpd(f"Cholesky factorization failed: {exc}") from exc
    return scipy.linalg.cho_solve(factor, B)


def spd_solve_batch(Ms: ArrayLike, B: ArrayLike) -> NDArray[np.float64]:
    """Solve M_j X_j = B for every matrix of a (m, d, d) stack; B is shared (d, n) or stacked."""
    sym = _symmetrized(Ms)
    B = np.asarray(B, dtype=np.float64)
    rhs = np.broadcast_to(B, sym.shape[:-1] + B.shape[-1:]) if B.ndim == 2 else B
    try:
        # cholesky first so a non-SPD member is reported as such rather than solved by LU
        np.linalg.cholesky(sym)
        return np.linalg.solve(sym, rhs)
    except np.linalg.LinAlgError as exc:
        raise NotSpd(f"batched SPD solve failed: {exc}") from exc


def singular_values(W: ArrayLike) -> NDArray[np.float64]:
    """Descending singular values, min(rows, cols) of them."""
    W = as_matrix(W)
    if not np.all(np.isfinite(W)):
        raise ConvergenceFailure("matrix has non-finite entries")
    try:
        sigma = scipy.linalg.svd(W, compute_uv=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        try:
            sigma = scipy.linalg.svd(W, compute_uv=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise ConvergenceFailure(f"SVD did not converge: {exc}") from exc
    return np.clip(np.sort(sigma)[::-1], 0.0, None)


def column_norms(M: ArrayLike) -> NDArray[np.float64]:
    return np.linalg.norm(np.asarray(M, dtype=np.float64), axis=0)


def sphere_project_columns(M: ArrayLike, floor: float = SPHERE_FLOOR) -> DenseMatrix:
    """Divide each column by max(||column||, floor)."""
    M = as_matrix(M)
    return M / np.maximum(column_norms(M), floor)[None, :]


def sphere_project_columns_vjp(M: ArrayLike, grad_out: ArrayLike, floor: float = SPHERE_FLOOR) -> DenseMatrix:
    """Pull a gradient back through ``sphere_project_columns``.

    Columns above the floor get (I - z z^T) g / ||v||; floored columns are a plain
    scaling by 1 / floor.
    """
    M = as_matrix(M)
    G = np.asarray(grad_out, dtype=np.float64)
    if G.shape != M.shape:
        raise DimensionMismatch(f"gradient shape {G.shape} does not match input {M.shape}")
    norms = column_norms(M)
    denom = np.maximum(norms, floor)
    Z = M / denom[None, :]
    radial = np.sum(Z * G, axis=0)
    active = norms > floor
    tangent = G - Z * np.where(active, radial, 0.0)[None, :]
    return tangent / denom[None, :]
