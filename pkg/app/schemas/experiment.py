"""Pydantic models for a full experiment: resolved configuration and per-epoch diagnostics."""

from __future__ import annotations

import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.datagen import SynthConfig
from app.schemas.model import OptimizerConfig
from app.schemas.rates import RateParams, TcrParams
from app.schemas.transport import SinkhornConfig


class ExperimentConfig(BaseModel):
    """Every scalar of the pipeline. Field names are the keys of the plain-text config file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    master_seed: int = Field(default=0, ge=0)
    k: int = Field(default=2, ge=1, description="Number of clusters")
    feature_dim: int = Field(default=3, ge=1, description="Output dimension d of both heads")
    hidden: int = Field(default=100, ge=1, description="Hidden units per head")

    # ── objectives ─────────────────────────────────────────────────────────
    tcr_eps_sq: float = Field(default=0.2, gt=0.0)
    mlc_eps_sq: float = Field(default=0.1, gt=0.0)
    tcr_lambda: Optional[float] = Field(default=None, ge=0.0, description="None means 200 / n_b")

    # ── Sinkhorn projection ────────────────────────────────────────────────
    eta: float = Field(default=0.175, gt=0.0)
    sinkhorn_max_iters: int = Field(default=200, ge=1)
    sinkhorn_tol: float = Field(default=1e-6, gt=0.0)

    # ── schedule ───────────────────────────────────────────────────────────
    epochs_tcr: int = Field(default=500, ge=0)
    epochs_mlc: int = Field(default=500, ge=0)
    batch_size: int = Field(default=1024, ge=1, description="n_b; capped at n")
    num_aug: int = Field(default=2, ge=1, description="A")
    aug_sigma: float = Field(default=0.05, ge=0.0)
    use_stage1: bool = True
    use_augmentation: bool = True

    # ── optimizers ─────────────────────────────────────────────────────────
    tcr_lr: float = Field(default=0.05, ge=0.0)
    tcr_momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    tcr_weight_decay: float = Field(default=5e-4, ge=0.0)
    feature_lr: float = Field(default=1e-2, ge=0.0)
    feature_momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    feature_weight_decay: float = Field(default=5e-4, ge=0.0)
    cluster_lr: float = Field(default=1e-2, ge=0.0)
    cluster_momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    cluster_weight_decay: float = Field(default=5e-4, ge=0.0)

    # ── readout / evaluation ───────────────────────────────────────────────
    spectral_restarts: int = Field(default=10, ge=1)
    rank_threshold: float = Field(default=0.95, gt=0.0, lt=1.0)
    full_gamma_cap: int = Field(default=4096, ge=1)
    readout_sinkhorn_max_iters: int = Field(
        default=20000, ge=1, description="Rounds allowed to the full-data projection before it fails"
    )

    # ── synthetic data ─────────────────────────────────────────────────────
    synth_amp: float = 0.2
    synth_omega: float = 5.0
    synth_noise_std: float = Field(default=math.sqrt(0.05), ge=0.0)
    synth_points_per_manifold: int = Field(default=100, ge=1)

    # ── execution ──────────────────────────────────────────────────────────
    n_jobs: int = Field(default=1, description="joblib workers; never changes results")
    log_every: int = Field(default=50, ge=1)

    def synth_config(self, seed: int) -> SynthConfig:
        return SynthConfig(
            amp=self.synth_amp,
            omega=self.synth_omega,
            noise_std=self.synth_noise_std,
            points_per_manifold=self.synth_points_per_manifold,
            seed=seed,
        )

    def tcr_params(self, n: int) -> TcrParams:
        lam = self.tcr_lambda if self.tcr_lambda is not None else 200.0 / n
        return TcrParams(epsilon_sq=self.tcr_eps_sq, lam=lam)

    def tcr_rate_params(self) -> RateParams:
        return RateParams(epsilon_sq=self.tcr_eps_sq, d=self.feature_dim)

    def mlc_rate_params(self) -> RateParams:
        return RateParams(epsilon_sq=self.mlc_eps_sq, d=self.feature_dim)

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(eta=self.eta, max_iters=self.sinkhorn_max_iters, tol=self.sinkhorn_tol)

    def readout_sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(eta=self.eta, max_iters=self.readout_sinkhorn_max_iters, tol=self.sinkhorn_tol)

    def tcr_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(lr=self.tcr_lr, momentum=self.tcr_momentum, weight_decay=self.tcr_weight_decay)

    def feature_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            lr=self.feature_lr, momentum=self.feature_momentum, weight_decay=self.feature_weight_decay
        )

    def cluster_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            lr=self.cluster_lr, momentum=self.cluster_momentum, weight_decay=self.cluster_weight_decay
        )


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=0)
    R: float
    Rc: float
    deltaR: float
    rank_all: int
    ranks: list[int] = Field(default_factory=list, description="Numerical rank per ground-truth cluster")
    acc: float
    nmi: float
    ms: float = Field(..., ge=0.0, description="Wall-clock time of the epoch")

    @model_validator(mode="after")
    def _delta_matches(self) -> "EpochRecord":
        if abs(self.deltaR - (self.R - self.Rc)) > 1e-9:
            raise ValueError(f"deltaR={self.deltaR} does not equal R - Rc={self.R - self.Rc}")
        return self

    def to_row(self) -> dict:
        row: dict = {
            "epoch": self.epoch,
            "R": self.R,
            "Rc": self.Rc,
            "deltaR": self.deltaR,
            "rank_all": self.rank_all,
        }
        for j, r in enumerate(self.ranks):
            row[f"rank_c{j}"] = r
        row.update({"acc": self.acc, "nmi": self.nmi, "ms": self.ms})
        return row


class AblationRow(BaseModel):
    name: str
    acc: float
    nmi: float


class StabilityRow(BaseModel):
    seed: int
    acc: float
    nmi: float
