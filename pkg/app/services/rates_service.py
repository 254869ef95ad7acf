"""
rates_service.py
----------------
Coding-rate objectives and their analytic gradients.

  R(Z)        = log det(I + d/(n eps^2) Z Z^T)                 expansion rate
  Rc(Z, Pi)   = sum_j (n_j/n) log det(I + d/(n_j eps^2) Z Diag(Pi_j) Z^T)
  Rc(Z, G)    = (1/n) sum_j log det(I + d/eps^2 Z Diag(G_j) Z^T)
  MCR2        = R - Rc(Z, Pi)                                   supervised
  MLC         = R - Rc(Z, G)                                    G doubly stochastic
  TCR         = R((Z + Z')/2) + lam * sum_i |z_i^T z'_i|        two-view warm-up

Every log-det is taken on the d x d side. Per-column terms are summed left to
right so results do not depend on how the terms were produced.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.errors import DimensionMismatch, NotDoublyStochastic
from app.schemas.rates import RateParams, TcrParams
from app.services.numerics_service import (
    DenseMatrix,
    as_matrix,
    logdet_spd,
    logdet_spd_batch,
    spd_solve,
    spd_solve_batch,
)

logger = logging.getLogger(__name__)

MEMBERSHIP_COL_TOL = 1e-6


class MlcGradients(NamedTuple):
    value: float
    grad_z: DenseMatrix
    grad_gamma: DenseMatrix


class TcrGradients(NamedTuple):
    value: float
    grad_z: DenseMatrix
    grad_zp: DenseMatrix


# ──────────────────────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────────────────────
def _check_features(Z: ArrayLike, p: RateParams) -> DenseMatrix:
    Z = as_matrix(Z)
    if Z.shape[0] != p.d:
        raise DimensionMismatch(f"feature matrix has {Z.shape[0]} rows but d={p.d}")
    if Z.shape[1] < 1:
        raise DimensionMismatch("feature matrix has no columns")
    return Z


def _ordered_sum(terms: NDArray[np.float64]) -> float:
    total = 0.0
    for t in terms.tolist():
        total += t
    return total


def _check_membership(gamma: ArrayLike, n: int, validate: bool) -> DenseMatrix:
    gamma = as_matrix(gamma)
    if gamma.shape != (n, n):
        raise DimensionMismatch(f"membership must be {n}x{n}, got {gamma.shape}")
    if validate:
        deviation = float(np.max(np.abs(gamma.sum(axis=0) - 1.0)))
        if deviation > MEMBERSHIP_COL_TOL:
            raise NotDoublyStochastic(f"membership column sums deviate from 1 by {deviation:.3e}")
    return gamma


def _column_gram_stack(Z: DenseMatrix, weights: DenseMatrix, scale: float) -> NDArray[np.float64]:
    """Stack of I + scale * Z Diag(weights[:, j]) Z^T for every column j of ``weights``."""
    d = Z.shape[0]
    stack = scale * np.einsum("ai,ij,bi->jab", Z, weights, Z, optimize=True)
    stack += np.eye(d)[None, :, :]
    return stack


# ──────────────────────────────────────────────────────────────────────────────
# Partition helpers
# ──────────────────────────────────────────────────────────────────────────────
def partition_from_labels(labels: ArrayLike, k: int) -> DenseMatrix:
    """One-hot n x k partition matrix from integer labels in [0, k)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise DimensionMismatch("labels must be a non-empty vector")
    if labels.min() < 0 or labels.max() >= k:
        raise DimensionMismatch(f"labels must lie in [0, {k})")
    pi = np.zeros((labels.size, k))
    pi[np.arange(labels.size), labels] = 1.0
    return pi


def balanced_partition_membership(labels: ArrayLike, k: int) -> DenseMatrix:
    """Gamma whose column j is the indicator of j's cluster divided by that cluster's size."""
    pi = partition_from_labels(labels, k)
    sizes = pi.sum(axis=0)
    labels = np.asarray(labels, dtype=np.int64)
    return pi[:, labels] / sizes[labels][None, :]


# ──────────────────────────────────────────────────────────────────────────────
# Public API
# ──────────────────────────────────────────────────────────────────────────────
def expand_rate(Z: ArrayLike, p: RateParams) -> float:
    Z = _check_features(Z, p)
    n = Z.shape[1]
    alpha = p.d / (n * p.epsilon_sq)
    return logdet_spd(np.eye(p.d) + alpha * (Z @ Z.T))


def expand_rate_grad(Z: ArrayLike, p: RateParams) -> tuple[float, DenseMatrix]:
    """R(Z) and dR/dZ = 2 alpha (I + alpha Z Z^T)^{-1} Z with alpha = d / (n eps^2)."""
    Z = _check_features(Z, p)
    n = Z.shape[1]
    alpha = p.d / (n * p.epsilon_sq)
    M = np.eye(p.d) + alpha * (Z @ Z.T)
    value = logdet_spd(M)
    grad = 2.0 * alpha * spd_solve(M, Z)
    return value, grad


def compress_rate_partition(Z: ArrayLike, pi: ArrayLike, p: RateParams) -> float:
    Z = _check_features(Z, p)
    pi = as_matrix(pi)
    n = Z.shape[1]
    if pi.shape[0] != n:
        raise DimensionMismatch(f"partition has {pi.shape[0]} rows but Z has {n} columns")
    total = 0.0
    for j in range(pi.shape[1]):
        weight = float(pi[:, j].sum())
        if weight <= 0.0:
            continue  # empty cluster contributes its zero-weight limit
        cov = (Z * pi[:, j][None, :]) @ Z.T
        total += (weight / n) * logdet_spd(np.eye(p.d) + (p.d / (weight * p.epsilon_sq)) * cov)
    return total


def mcr2_objective(Z: ArrayLike, pi: ArrayLike, p: RateParams) -> float:
    return expand_rate(Z, p) - compress_rate_partition(Z, pi, p)


def compress_rate_membership(
    Z: ArrayLike,
    gamma: ArrayLike,
    p: RateParams,
    *,
    validate: bool = True,
) -> float:
    Z = _check_features(Z, p)
    n = Z.shape[1]
    gamma = _check_membership(gamma, n, validate)
    stack = _column_gram_stack(Z, gamma, p.d / p.epsilon_sq)
    return _ordered_sum(logdet_spd_batch(stack)) / n


def mlc_objective_with_grads(
    Z: ArrayLike,
    gamma: ArrayLike,
    p: RateParams,
    *,
    validate: bool = True,
) -> MlcGradients:
    """R(Z) - Rc(Z, Gamma) with gradients w.r.t. Z and Gamma.

    ``validate=False`` skips the column-sum check. Finite-difference checks step off
    the doubly stochastic set, and the pipeline tracks Sinkhorn deviation itself.
    """
    Z = _check_features(Z, p)
    n = Z.shape[1]
    gamma = _check_membership(gamma, n, validate)
    c = p.d / p.epsilon_sq

    r_value, r_grad = expand_rate_grad(Z, p)

    stack = _column_gram_stack(Z, gamma, c)
    rc_value = _ordered_sum(logdet_spd_batch(stack)) / n
    # solved[j] = M_j^{-1} Z, shape (n, d, n)
    solved = spd_solve_batch(stack, Z)

    grad_rc_z = (2.0 * c / n) * np.einsum("jai,ij->ai", solved, gamma, optimize=True)
    quad = np.einsum("ai,jai->ij", Z, solved, optimize=True)  # z_i^T M_j^{-1} z_i

    return MlcGradients(
        value=r_value - rc_value,
        grad_z=r_grad - grad_rc_z,
        grad_gamma=-(c / n) * quad,
    )


def mlc_objective(Z: ArrayLike, gamma: ArrayLike, p: RateParams) -> float:
    return expand_rate(Z, p) - compress_rate_membership(Z, gamma, p)


def tcr_objective_with_grads(Z: ArrayLike, Zp: ArrayLike, t: TcrParams) -> TcrGradients:
    """Total coding rate of the averaged views plus lam * sum |cos| between paired views."""
    Z = as_matrix(Z)
    Zp = as_matrix(Zp)
    if Z.shape != Zp.shape:
        raise DimensionMismatch(f"views differ in shape: {Z.shape} vs {Zp.shape}")
    p = RateParams(epsilon_sq=t.epsilon_sq, d=Z.shape[0])
    mean = 0.5 * (Z + Zp)
    r_value, r_grad = expand_rate_grad(mean, p)

    cos = np.sum(Z * Zp, axis=0)
    sign = np.sign(cos)  # sign(0) = 0
    value = r_value + t.lam * _ordered_sum(np.abs(cos))
    grad_z = 0.5 * r_grad + t.lam * sign[None, :] * Zp
    grad_zp = 0.5 * r_grad + t.lam * sign[None, :] * Z
    return TcrGradients(value=value, grad_z=grad_z, grad_zp=grad_zp)
