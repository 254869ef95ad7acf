"""
datagen_service.py
------------------
Synthetic union-of-manifolds data on the sphere S^2.

Manifold 0 (label 0): a closed wavy curve
    x_i = [cos(A sin(w phi_i)) cos(phi_i), cos(A sin(w phi_i)) sin(phi_i), sin(A sin(w phi_i))] + noise
    phi_i = 2 pi i / m,  i = 1..m
Manifold 1 (label 1): m Gaussian samples around the north pole [0, 0, 1].

Noise is isotropic Gaussian with standard deviation ``noise_std`` (default sqrt(0.05),
i.e. covariance 0.05 I). Samples are stored off the sphere as drawn; the pipeline
projects them onto the sphere before either head sees them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.errors import LengthMismatch
from app.core.seeding import derive_rng
from app.schemas.datagen import SynthConfig
from app.services.numerics_service import DenseMatrix, as_matrix, sphere_project_columns

POLE = np.array([0.0, 0.0, 1.0])


@dataclass
class LabeledDataset:
    X: DenseMatrix  # D x n
    y: NDArray[np.int64]  # n

    def __post_init__(self) -> None:
        self.X = as_matrix(self.X)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[1] != self.y.size:
            raise LengthMismatch(f"{self.X.shape[1]} columns but {self.y.size} labels")
        if self.y.size and self.y.min() < 0:
            raise LengthMismatch("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.y.max()) + 1 if self.y.size else 0


def curve_points(amp: float, omega: float, m: int) -> DenseMatrix:
    """Noise-free curve, 3 x m."""
    phi = 2.0 * np.pi * np.arange(1, m + 1) / m
    lat = amp * np.sin(omega * phi)
    return np.vstack([np.cos(lat) * np.cos(phi), np.cos(lat) * np.sin(phi), np.sin(lat)])


def make_curve_manifold(cfg: SynthConfig) -> DenseMatrix:
    m = cfg.points_per_manifold
    rng = derive_rng(cfg.seed, "curve")
    X = curve_points(cfg.amp, cfg.omega, m)
    if cfg.noise_std > 0:
        X = X + rng.normal(0.0, cfg.noise_std, size=X.shape)
    return X


def make_point_cluster(cfg: SynthConfig) -> DenseMatrix:
    m = cfg.points_per_manifold
    rng = derive_rng(cfg.seed, "point")
    X = np.repeat(POLE[:, None], m, axis=1)
    if cfg.noise_std > 0:
        X = X + rng.normal(0.0, cfg.noise_std, size=X.shape)
    return X


def make_synthetic_dataset(cfg: SynthConfig) -> LabeledDataset:
    m = cfg.points_per_manifold
    X = np.hstack([make_curve_manifold(cfg), make_point_cluster(cfg)])
    y = np.concatenate([np.zeros(m, dtype=np.int64), np.ones(m, dtype=np.int64)])
    return LabeledDataset(X=X, y=y)


def augment_sphere_jitter(X: ArrayLike, sigma_aug: float, rng: np.random.Generator) -> DenseMatrix:
    """Additive Gaussian jitter followed by re-projection onto the sphere."""
    if sigma_aug < 0:
        raise ValueError("sigma_aug must be non-negative")
    X = as_matrix(X)
    if sigma_aug == 0:
        return sphere_project_columns(X)
    return sphere_project_columns(X + rng.normal(0.0, sigma_aug, size=X.shape))
