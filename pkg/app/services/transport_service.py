"""
transport_service.py
--------------------
Doubly stochastic memberships from a similarity matrix.

  gram_similarity     S = C^T C (exactly symmetric)
  sinkhorn_project    entropic projection of S onto the Birkhoff polytope:
                      Gamma = Diag(e^u) exp(S / eta) Diag(e^v), found by alternating
                      row and column normalization
  sinkhorn_vjp        reverse-mode pass through exactly the iterations the forward
                      pass ran, read back from the recorded u/v history

The kernel is shifted so its largest log-entry is 0. When the remaining spread of
log-entries fits in float64 (``SCALING_SPREAD``) the rounds run as matrix-vector
products on exp(S / eta); otherwise they run in the log domain with logsumexp.
Both paths record log-scalings, so the backward pass reads one trace format.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from app.core.errors import DimensionMismatch, IterationMismatch
from app.schemas.transport import SinkhornConfig
from app.services.numerics_service import DenseMatrix, as_matrix

logger = logging.getLogger(__name__)

# max of (max - min) over S / eta for the matrix-vector path; e^-50 ~ 2e-22
SCALING_SPREAD = 50.0


@dataclass
class SinkhornTrace:
    """Scaling history of one forward call. ``us[t]`` and ``vs[t]`` are the vectors after round t+1.

    Gamma after round t is exp(S / eta - shift + us[t] + vs[t]), symmetrized when
    ``symmetric`` is set.
    """

    eta: float
    shape: tuple[int, int]
    shift: float = 0.0
    scaled: bool = False
    symmetric: bool = False
    us: list[NDArray[np.float64]] = field(default_factory=list)
    vs: list[NDArray[np.float64]] = field(default_factory=list)

    @property
    def iters(self) -> int:
        return len(self.us)


@dataclass
class SinkhornResult:
    gamma: DenseMatrix
    iters_used: int
    converged: bool
    max_deviation: float
    trace: SinkhornTrace


# ──────────────────────────────────────────────────────────────────────────────
# Similarity
# ──────────────────────────────────────────────────────────────────────────────
def gram_similarity(C: ArrayLike) -> DenseMatrix:
    """C^T C computed once on the upper triangle and mirrored."""
    C = as_matrix(C)
    S = C.T @ C
    upper = np.triu(S)
    return upper + np.triu(S, 1).T


def gram_similarity_vjp(C: ArrayLike, grad_s: ArrayLike) -> DenseMatrix:
    C = as_matrix(C)
    G = as_matrix(grad_s)
    return C @ (G + G.T)


# ──────────────────────────────────────────────────────────────────────────────
# Projection
# ──────────────────────────────────────────────────────────────────────────────
def _marginal_deviation(gamma: DenseMatrix) -> float:
    rows = np.max(np.abs(gamma.sum(axis=1) - 1.0))
    cols = np.max(np.abs(gamma.sum(axis=0) - 1.0))
    return float(max(rows, cols))


def _shifted_log_kernel(S: DenseMatrix, eta: float, shift: float) -> DenseMatrix:
    return S / eta - shift


def _rounds_scaled(
    log_k: DenseMatrix, cfg: SinkhornConfig, trace: SinkhornTrace, record: bool
) -> tuple[DenseMatrix, int, float]:
    K = np.exp(log_k)
    n = K.shape[0]
    a = np.ones(n)
    b = np.ones(n)
    Kb = K @ b
    deviation = np.inf
    rounds = 0
    for _ in range(cfg.max_iters):
        a = 1.0 / Kb
        b = 1.0 / (K.T @ a)
        Kb = K @ b
        rounds += 1
        if record:
            trace.us.append(np.log(a))
            trace.vs.append(np.log(b))
        # columns are exact after the column step; rows are a * (K b)
        deviation = float(np.max(np.abs(a * Kb - 1.0)))
        if deviation < cfg.tol:
            break
    return a[:, None] * K * b[None, :], rounds, deviation


def _rounds_log(
    log_k: DenseMatrix, cfg: SinkhornConfig, trace: SinkhornTrace, record: bool
) -> tuple[DenseMatrix, int, float]:
    n = log_k.shape[0]
    v = np.zeros(n)
    gamma = np.exp(log_k)
    deviation = np.inf
    rounds = 0
    for _ in range(cfg.max_iters):
        u = -logsumexp(log_k + v[None, :], axis=1)
        v = -logsumexp(log_k + u[:, None], axis=0)
        rounds += 1
        if record:
            trace.us.append(u)
            trace.vs.append(v)
        gamma = np.exp(log_k + u[:, None] + v[None, :])
        deviation = _marginal_deviation(gamma)
        if deviation < cfg.tol:
            break
    return gamma, rounds, deviation


def sinkhorn_project(S: ArrayLike, cfg: SinkhornConfig, record: bool = True) -> SinkhornResult:
    """Entropic projection argmax_{Gamma in Omega} <S, Gamma> - eta * sum Gamma log Gamma.

    Each round normalizes rows then columns, so column sums are exact after every
    round and convergence is judged on the row deviation. Missing the tolerance is
    reported through ``converged=False``, never raised. An exactly symmetric S
    returns (Gamma + Gamma^T) / 2, which keeps both marginals within the reached
    deviation. ``record=False`` skips the scaling history (no backward pass).
    """
    S = as_matrix(S)
    n, m = S.shape
    if n != m:
        raise DimensionMismatch(f"similarity must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DimensionMismatch("similarity has non-finite entries")

    shift = float(np.max(S)) / cfg.eta if S.size else 0.0
    log_k = _shifted_log_kernel(S, cfg.eta, shift)
    scaled = bool(S.size == 0 or -float(np.min(log_k)) <= SCALING_SPREAD)
    trace = SinkhornTrace(
        eta=cfg.eta,
        shape=(n, n),
        shift=shift,
        scaled=scaled,
        symmetric=bool(np.array_equal(S, S.T)),
    )
    rounds_fn = _rounds_scaled if scaled else _rounds_log
    gamma, rounds, deviation = rounds_fn(log_k, cfg, trace, record)
    converged = bool(deviation < cfg.tol)

    if trace.symmetric:
        gamma = 0.5 * (gamma + gamma.T)
    if not converged:
        logger.debug("Sinkhorn stopped after %d rounds, deviation %.3e", rounds, deviation)
    return SinkhornResult(
        gamma=gamma,
        iters_used=rounds,
        converged=converged,
        max_deviation=_marginal_deviation(gamma) if n else 0.0,
        trace=trace,
    )


# ──────────────────────────────────────────────────────────────────────────────
# Backward
# ──────────────────────────────────────────────────────────────────────────────
def _vjp_scaled(log_k: DenseMatrix, trace: SinkhornTrace, G_bar: DenseMatrix) -> DenseMatrix:
    K = np.exp(log_k)
    n = K.shape[0]
    ones = np.ones(n)
    a_t, b_t = np.exp(trace.us[-1]), np.exp(trace.vs[-1])
    weighted = G_bar * (a_t[:, None] * K * b_t[None, :])
    u_bar = weighted.sum(axis=1)
    v_bar = weighted.sum(axis=0)

    # every round subtracts K * (left right^T); the outer products are summed at the end
    lefts: list[NDArray[np.float64]] = []
    rights: list[NDArray[np.float64]] = []
    for t in range(trace.iters - 1, -1, -1):
        a = np.exp(trace.us[t])
        b = np.exp(trace.vs[t])
        b_prev = np.exp(trace.vs[t - 1]) if t > 0 else ones

        # b_t = 1 / (K^T a_t)
        bv = b * v_bar
        lefts.append(a)
        rights.append(bv)
        u_bar = u_bar - a * (K @ bv)

        # a_t = 1 / (K b_prev)
        au = a * u_bar
        lefts.append(au)
        rights.append(b_prev)
        v_bar = -(b_prev * (K.T @ au))
        u_bar = np.zeros(n)

    return weighted - K * (np.column_stack(lefts) @ np.column_stack(rights).T)


def _vjp_log(log_k: DenseMatrix, trace: SinkhornTrace, G_bar: DenseMatrix) -> DenseMatrix:
    n = log_k.shape[0]
    zeros = np.zeros(n)

    # output: Gamma = exp(L + u_T + v_T)
    u_t, v_t = trace.us[-1], trace.vs[-1]
    weighted = G_bar * np.exp(log_k + u_t[:, None] + v_t[None, :])
    l_bar = weighted.copy()
    u_bar = weighted.sum(axis=1)
    v_bar = weighted.sum(axis=0)

    for t in range(trace.iters - 1, -1, -1):
        u_t = trace.us[t]
        v_t = trace.vs[t]
        v_prev = trace.vs[t - 1] if t > 0 else zeros

        # v_t = -LSE_i(L + u_t): column-stochastic P
        p_col = np.exp(log_k + u_t[:, None] + v_t[None, :])
        l_bar -= p_col * v_bar[None, :]
        u_bar = u_bar - p_col @ v_bar

        # u_t = -LSE_j(L + v_prev): row-stochastic P
        p_row = np.exp(log_k + u_t[:, None] + v_prev[None, :])
        l_bar -= p_row * u_bar[:, None]
        v_bar = -(p_row.T @ u_bar)
        u_bar = np.zeros(n)

    return l_bar


def sinkhorn_vjp(
    S: ArrayLike,
    cfg: SinkhornConfig,
    upstream: ArrayLike,
    trace: SinkhornTrace | None = None,
) -> DenseMatrix:
    """Gradient w.r.t. S of <upstream, Gamma(S)> by unrolling the recorded rounds."""
    if trace is None or trace.iters == 0:
        raise IterationMismatch("no recorded Sinkhorn trace for this call")
    S = as_matrix(S)
    G_bar = as_matrix(upstream)
    if S.shape != trace.shape or G_bar.shape != trace.shape:
        raise IterationMismatch(f"trace was recorded for shape {trace.shape}, got {S.shape}")
    if trace.eta != cfg.eta:
        raise IterationMismatch(f"trace was recorded with eta={trace.eta}, config has {cfg.eta}")

    if trace.symmetric:
        G_bar = 0.5 * (G_bar + G_bar.T)
    log_k = _shifted_log_kernel(S, cfg.eta, trace.shift)
    l_bar = _vjp_scaled(log_k, trace, G_bar) if trace.scaled else _vjp_log(log_k, trace, G_bar)
    return l_bar / cfg.eta


def entropy(gamma: ArrayLike) -> float:
    """-sum Gamma log Gamma with 0 log 0 = 0."""
    g = np.asarray(gamma, dtype=np.float64)
    positive = g[g > 0]
    return float(-np.sum(positive * np.log(positive)))
