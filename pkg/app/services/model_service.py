"""
model_service.py
----------------
Feature head f and cluster head g: two-layer fully connected networks whose
outputs are projected onto the unit sphere.

    Z = P_sphere(W2 relu(W1 X + b1) + b2)

Gradients are computed by hand (reverse mode through the cached forward trace).
Optimization is plain SGD with momentum and weight decay; the training loop
maximizes its objectives, so updates take ``direction=+1``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, fields
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.errors import DimensionMismatch, ShapeMismatch, TraceMismatch
from app.schemas.model import OptimizerConfig
from app.services.numerics_service import (
    SPHERE_FLOOR,
    DenseMatrix,
    as_matrix,
    column_norms,
    sphere_project_columns,
    sphere_project_columns_vjp,
)

logger = logging.getLogger(__name__)


# ──────────────────────────────────────────────────────────────────────────────
# Parameter containers
# ──────────────────────────────────────────────────────────────────────────────
@dataclass
class MlpParams:
    w1: NDArray[np.float64]  # h x D
    b1: NDArray[np.float64]  # h
    w2: NDArray[np.float64]  # d x h
    b2: NDArray[np.float64]  # d

    def __post_init__(self) -> None:
        h, _ = self.w1.shape
        d, h2 = self.w2.shape
        if h2 != h or self.b1.shape != (h,) or self.b2.shape != (d,):
            raise ShapeMismatch(
                f"inconsistent head shapes: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]

    def tensors(self) -> Iterator[tuple[str, NDArray[np.float64]]]:
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    def copy(self) -> "MlpParams":
        return copy.deepcopy(self)

    def zeros_like(self) -> "MlpParams":
        return MlpParams(**{name: np.zeros_like(t) for name, t in self.tensors()})

    def same_shape(self, other: "MlpParams") -> bool:
        return all(t.shape == getattr(other, name).shape for name, t in self.tensors())

    def combine(self, other: "MlpParams", a: float = 1.0, b: float = 1.0) -> "MlpParams":
        """Elementwise a * self + b * other."""
        if not self.same_shape(other):
            raise ShapeMismatch("parameter shapes differ")
        return MlpParams(**{name: a * t + b * getattr(other, name) for name, t in self.tensors()})


@dataclass
class HeadPair:
    feature: MlpParams
    cluster: MlpParams

    def __post_init__(self) -> None:
        if self.feature.input_dim != self.cluster.input_dim:
            raise ShapeMismatch("feature and cluster heads must share the input dimension")


@dataclass
class SgdState:
    lr: float
    momentum: float
    weight_decay: float
    velocity: MlpParams

    @classmethod
    def for_params(cls, params: MlpParams, cfg: OptimizerConfig) -> "SgdState":
        return cls(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay, velocity=params.zeros_like())


@dataclass
class HeadTrace:
    X: DenseMatrix
    pre_hidden: DenseMatrix  # W1 X + b1
    hidden: DenseMatrix  # relu(pre_hidden)
    pre_sphere: DenseMatrix  # W2 hidden + b2
    Z: DenseMatrix


@dataclass
class FeatureAverageTrace:
    count: int
    mean: DenseMatrix


# ──────────────────────────────────────────────────────────────────────────────
# Initialization
# ──────────────────────────────────────────────────────────────────────────────
def init_mlp_params(input_dim: int, hidden: int, output_dim: int, rng: np.random.Generator) -> MlpParams:
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases alike."""
    bound1 = 1.0 / np.sqrt(input_dim)
    bound2 = 1.0 / np.sqrt(hidden)
    return MlpParams(
        w1=rng.uniform(-bound1, bound1, size=(hidden, input_dim)),
        b1=rng.uniform(-bound1, bound1, size=hidden),
        w2=rng.uniform(-bound2, bound2, size=(output_dim, hidden)),
        b2=rng.uniform(-bound2, bound2, size=output_dim),
    )


def init_head_pair(input_dim: int, hidden: int, output_dim: int, rng: np.random.Generator) -> HeadPair:
    feature = init_mlp_params(input_dim, hidden, output_dim, rng)
    cluster = init_mlp_params(input_dim, hidden, output_dim, rng)
    return HeadPair(feature=feature, cluster=cluster)


# ──────────────────────────────────────────────────────────────────────────────
# Forward / backward
# ──────────────────────────────────────────────────────────────────────────────
def head_forward(p: MlpParams, X: ArrayLike) -> tuple[DenseMatrix, HeadTrace]:
    X = as_matrix(X)
    if X.shape[0] != p.input_dim:
        raise DimensionMismatch(f"input has {X.shape[0]} rows, head expects {p.input_dim}")
    pre_hidden = p.w1 @ X + p.b1[:, None]
    hidden = np.maximum(pre_hidden, 0.0)
    pre_sphere = p.w2 @ hidden + p.b2[:, None]
    Z = sphere_project_columns(pre_sphere)
    return Z, HeadTrace(X=X, pre_hidden=pre_hidden, hidden=hidden, pre_sphere=pre_sphere, Z=Z)


def head_backward(p: MlpParams, trace: HeadTrace, grad_z: ArrayLike) -> MlpParams:
    """Exact parameter gradients of <grad_z, Z>; relu uses subgradient 0 at 0."""
    G = np.asarray(grad_z, dtype=np.float64)
    if G.shape != trace.Z.shape:
        raise TraceMismatch(f"gradient shape {G.shape} does not match forward output {trace.Z.shape}")
    if trace.pre_hidden.shape[0] != p.hidden or trace.pre_sphere.shape[0] != p.output_dim:
        raise TraceMismatch("trace was recorded with differently shaped parameters")

    g_pre_sphere = sphere_project_columns_vjp(trace.pre_sphere, G)
    g_w2 = g_pre_sphere @ trace.hidden.T
    g_b2 = g_pre_sphere.sum(axis=1)
    g_hidden = p.w2.T @ g_pre_sphere
    g_pre_hidden = g_hidden * (trace.pre_hidden > 0.0)
    g_w1 = g_pre_hidden @ trace.X.T
    g_b1 = g_pre_hidden.sum(axis=1)
    return MlpParams(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


# ──────────────────────────────────────────────────────────────────────────────
# One-shot membership initialization
# ──────────────────────────────────────────────────────────────────────────────
def copy_feature_to_cluster(hp: HeadPair) -> HeadPair:
    """Cluster head becomes an independent copy of the feature head."""
    if hp.feature.output_dim != hp.cluster.output_dim:
        raise ShapeMismatch(
            f"cannot copy: feature head outputs {hp.feature.output_dim} dims, "
            f"cluster head {hp.cluster.output_dim}"
        )
    return HeadPair(feature=hp.feature.copy(), cluster=hp.feature.copy())


# ──────────────────────────────────────────────────────────────────────────────
# Optimizer
# ──────────────────────────────────────────────────────────────────────────────
def sgd_step(p: MlpParams, g: MlpParams, s: SgdState, direction: int = 1) -> tuple[MlpParams, SgdState]:
    """v <- momentum v + (g - wd p direction);  p <- p + lr direction v."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 (ascent) or -1 (descent)")
    if not (p.same_shape(g) and p.same_shape(s.velocity)):
        raise ShapeMismatch("parameter, gradient and velocity shapes must match")
    step = g.combine(p, 1.0, -s.weight_decay * direction)
    velocity = s.velocity.combine(step, s.momentum, 1.0)
    params = p.combine(velocity, 1.0, s.lr * direction)
    return params, SgdState(lr=s.lr, momentum=s.momentum, weight_decay=s.weight_decay, velocity=velocity)


# ──────────────────────────────────────────────────────────────────────────────
# Augmentation averaging
# ──────────────────────────────────────────────────────────────────────────────
def _check_same_shape(mats: Sequence[ArrayLike], what: str) -> list[DenseMatrix]:
    if len(mats) == 0:
        raise ShapeMismatch(f"need at least one {what}")
    arrays = [as_matrix(m) for m in mats]
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ShapeMismatch(f"all {what}s must share shape {shape}")
    return arrays


def average_aug_features(Zs: Sequence[ArrayLike]) -> tuple[DenseMatrix, FeatureAverageTrace]:
    arrays = _check_same_shape(Zs, "feature matrix")
    mean = np.mean(np.stack(arrays), axis=0)
    degenerate = int(np.sum(column_norms(mean) <= SPHERE_FLOOR))
    if degenerate:
        logger.warning("%d averaged feature column(s) fell below the sphere floor", degenerate)
    return sphere_project_columns(mean), FeatureAverageTrace(count=len(arrays), mean=mean)


def average_aug_features_backward(trace: FeatureAverageTrace, grad_z: ArrayLike) -> list[DenseMatrix]:
    g_mean = sphere_project_columns_vjp(trace.mean, grad_z)
    share = g_mean / trace.count
    return [share.copy() for _ in range(trace.count)]


def average_aug_memberships(Gs: Sequence[ArrayLike]) -> DenseMatrix:
    arrays = _check_same_shape(Gs, "membership matrix")
    if arrays[0].shape[0] != arrays[0].shape[1]:
        raise ShapeMismatch("membership matrices must be square")
    return np.mean(np.stack(arrays), axis=0)


def average_aug_memberships_backward(count: int, grad_gamma: ArrayLike) -> list[DenseMatrix]:
    share = np.asarray(grad_gamma, dtype=np.float64) / count
    return [share.copy() for _ in range(count)]
