"""
pipeline_service.py
-------------------
End-to-end training and readout.

  1. Stage 1    train the feature head on the two-view TCR objective
  2. init       copy the feature head into the cluster head (one-shot Gamma)
  3. Stage 2    joint ascent of R(Z) - Rc(Z, Gamma) on both heads, with
                augmentation averaging
  4. readout    Gamma on the full dataset built the way Stage 2 builds it
                (same views, same averaging), spectral clustering, metrics

The heads only ever see inputs projected onto the unit sphere; augmented views
jitter those projected inputs and project again.

Every random draw comes from a named stream of ``cfg.master_seed``:
"init" (head weights), "tcr" (Stage-1 batches and views), "mlc" (Stage-2 batch
order), "aug" (Stage-2 views), "readout" (readout views), "kmeans" (readout
restarts).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import NDArray

from app.core.errors import ConvergenceFailure
from app.core.seeding import derive_rng, derive_seed
from app.schemas.experiment import AblationRow, EpochRecord, ExperimentConfig, StabilityRow
from app.schemas.transport import SinkhornConfig
from app.services.datagen_service import LabeledDataset, augment_sphere_jitter
from app.services.evalmetrics_service import (
    LAPLACIAN_VARIANT,
    NMI_VARIANT,
    clustering_accuracy,
    nmi,
    numerical_rank,
    per_cluster_ranks,
    spectral_clustering,
)
from app.services.model_service import (
    HeadPair,
    HeadTrace,
    MlpParams,
    SgdState,
    average_aug_features,
    average_aug_features_backward,
    average_aug_memberships,
    average_aug_memberships_backward,
    copy_feature_to_cluster,
    head_backward,
    head_forward,
    init_head_pair,
    sgd_step,
)
from app.services.numerics_service import DenseMatrix, sphere_project_columns
from app.services.rates_service import (
    compress_rate_membership,
    expand_rate,
    mlc_objective_with_grads,
    tcr_objective_with_grads,
)
from app.services.transport_service import (
    SinkhornResult,
    gram_similarity,
    gram_similarity_vjp,
    sinkhorn_project,
    sinkhorn_vjp,
)

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "no-stage-1", "no-augmentation", "no-mlc")


@dataclass
class Stage1Result:
    heads: HeadPair
    Z_init: DenseMatrix
    Z_tcr: DenseMatrix


@dataclass
class Readout:
    Z: DenseMatrix
    gamma: DenseMatrix
    sinkhorn_iters: int  # most rounds any view needed
    max_deviation: float


@dataclass
class PipelineResult:
    heads: HeadPair
    Z: DenseMatrix
    gamma: DenseMatrix
    labels: NDArray[np.int64]
    records: list[EpochRecord]
    metrics: dict[str, Any]
    Z_init: DenseMatrix
    Z_tcr: DenseMatrix


@dataclass
class _ViewPass:
    Z: DenseMatrix
    feature_trace: HeadTrace
    C: DenseMatrix
    cluster_trace: HeadTrace
    S: DenseMatrix
    sinkhorn: SinkhornResult


@dataclass
class _MlcStep:
    Z: DenseMatrix
    gamma: DenseMatrix
    value: float
    grad_feature: MlpParams
    grad_cluster: MlpParams
    unconverged: int = field(default=0)


# ──────────────────────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────────────────────
def _batches(n: int, batch_size: int, k: int, rng: np.random.Generator) -> list[NDArray[np.int64]]:
    """Shuffled, near-equal index chunks; every chunk keeps at least k columns."""
    order = rng.permutation(n)
    count = -(-n // min(batch_size, n))
    count = max(1, min(count, n // max(k, 1)))
    return np.array_split(order, count)


def _sum_grads(grads: Sequence[MlpParams]) -> MlpParams:
    total = grads[0]
    for g in grads[1:]:
        total = total.combine(g)
    return total


def sphere_inputs(data: LabeledDataset) -> DenseMatrix:
    return sphere_project_columns(data.X)


def input_views(base: DenseMatrix, cfg: ExperimentConfig, rng: np.random.Generator) -> list[DenseMatrix]:
    """``num_aug`` jittered copies of sphere-projected inputs, or ``base`` alone without augmentation."""
    if not cfg.use_augmentation:
        return [base]
    return [augment_sphere_jitter(base, cfg.aug_sigma, rng) for _ in range(cfg.num_aug)]


def forward_blocks(p: MlpParams, X: DenseMatrix, cap: int) -> DenseMatrix:
    """Head outputs for all columns of X, evaluated ``cap`` columns at a time."""
    n = X.shape[1]
    if n <= cap:
        return head_forward(p, X)[0]
    return np.concatenate([head_forward(p, X[:, s : s + cap])[0] for s in range(0, n, cap)], axis=1)


# ──────────────────────────────────────────────────────────────────────────────
# Stage 1: self-supervised initialization
# ──────────────────────────────────────────────────────────────────────────────
def evaluate_tcr(data: LabeledDataset, hp: HeadPair, cfg: ExperimentConfig) -> float:
    """TCR of the feature head on two fixed seeded views of the whole dataset."""
    rng = derive_rng(cfg.master_seed, "tcr-eval")
    base = sphere_inputs(data)
    X1 = augment_sphere_jitter(base, cfg.aug_sigma, rng)
    X2 = augment_sphere_jitter(base, cfg.aug_sigma, rng)
    Z1 = forward_blocks(hp.feature, X1, cfg.full_gamma_cap)
    Z2 = forward_blocks(hp.feature, X2, cfg.full_gamma_cap)
    return tcr_objective_with_grads(Z1, Z2, cfg.tcr_params(data.n)).value


def train_tcr(data: LabeledDataset, hp: HeadPair, cfg: ExperimentConfig) -> HeadPair:
    if cfg.epochs_tcr == 0:
        return hp
    rng = derive_rng(cfg.master_seed, "tcr")
    params = hp.feature
    state = SgdState.for_params(params, cfg.tcr_optimizer())
    base = sphere_inputs(data)
    logger.info("Stage 1: %d epoch(s) of TCR on n=%d", cfg.epochs_tcr, data.n)

    for epoch in range(cfg.epochs_tcr):
        value = float("nan")
        for idx in _batches(data.n, cfg.batch_size, cfg.k, rng):
            X_b = base[:, idx]
            X1 = augment_sphere_jitter(X_b, cfg.aug_sigma, rng)
            X2 = augment_sphere_jitter(X_b, cfg.aug_sigma, rng)
            Z1, trace1 = head_forward(params, X1)
            Z2, trace2 = head_forward(params, X2)
            out = tcr_objective_with_grads(Z1, Z2, cfg.tcr_params(len(idx)))
            grad = head_backward(params, trace1, out.grad_z).combine(head_backward(params, trace2, out.grad_zp))
            params, state = sgd_step(params, grad, state, direction=1)
            value = out.value
            logger.debug("tcr epoch %d batch of %d: %.6f", epoch, len(idx), value)
        if (epoch + 1) % cfg.log_every == 0 or epoch + 1 == cfg.epochs_tcr:
            logger.info("Stage 1 epoch %d/%d: TCR=%.4f", epoch + 1, cfg.epochs_tcr, value)

    return HeadPair(feature=params, cluster=hp.cluster)


def init_membership(hp: HeadPair, cfg: ExperimentConfig) -> HeadPair:
    started = time.perf_counter()
    out = copy_feature_to_cluster(hp)
    logger.info("Cluster head initialized from feature head in %.3f ms", 1000.0 * (time.perf_counter() - started))
    return out


def run_stage1(data: LabeledDataset, cfg: ExperimentConfig) -> Stage1Result:
    """Random heads, then Stage 1 when enabled; keeps feature snapshots of both points."""
    hp = init_head_pair(data.X.shape[0], cfg.hidden, cfg.feature_dim, derive_rng(cfg.master_seed, "init"))
    base = sphere_inputs(data)
    Z_init = forward_blocks(hp.feature, base, cfg.full_gamma_cap)
    if cfg.use_stage1:
        hp = train_tcr(data, hp, cfg)
    else:
        logger.info("Stage 1 disabled; heads keep their random initialization")
    Z_tcr = forward_blocks(hp.feature, base, cfg.full_gamma_cap)
    return Stage1Result(heads=hp, Z_init=Z_init, Z_tcr=Z_tcr)


# ──────────────────────────────────────────────────────────────────────────────
# Stage 2: manifold linearizing and clustering
# ──────────────────────────────────────────────────────────────────────────────
def _view_pass(hp: HeadPair, V: DenseMatrix, sk: SinkhornConfig) -> _ViewPass:
    Z, feature_trace = head_forward(hp.feature, V)
    C, cluster_trace = head_forward(hp.cluster, V)
    S = gram_similarity(C)
    return _ViewPass(
        Z=Z,
        feature_trace=feature_trace,
        C=C,
        cluster_trace=cluster_trace,
        S=S,
        sinkhorn=sinkhorn_project(S, sk),
    )


def mlc_step(
    hp: HeadPair,
    views: Sequence[DenseMatrix],
    cfg: ExperimentConfig,
    n_jobs: int = 1,
) -> _MlcStep:
    """Objective and gradients for both heads on one batch, given its views."""
    sk = cfg.sinkhorn_config()
    passes: list[_ViewPass] = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_view_pass)(hp, V, sk) for V in views
    )

    Z, avg_trace = average_aug_features([p.Z for p in passes])
    gamma = average_aug_memberships([p.sinkhorn.gamma for p in passes])
    out = mlc_objective_with_grads(Z, gamma, cfg.mlc_rate_params(), validate=False)

    grads_z = average_aug_features_backward(avg_trace, out.grad_z)
    grads_gamma = average_aug_memberships_backward(len(passes), out.grad_gamma)

    feature_grads = []
    cluster_grads = []
    for p, g_z, g_gamma in zip(passes, grads_z, grads_gamma):
        feature_grads.append(head_backward(hp.feature, p.feature_trace, g_z))
        g_s = sinkhorn_vjp(p.S, sk, g_gamma, p.sinkhorn.trace)
        cluster_grads.append(head_backward(hp.cluster, p.cluster_trace, gram_similarity_vjp(p.C, g_s)))

    return _MlcStep(
        Z=Z,
        gamma=gamma,
        value=out.value,
        grad_feature=_sum_grads(feature_grads),
        grad_cluster=_sum_grads(cluster_grads),
        unconverged=sum(not p.sinkhorn.converged for p in passes),
    )


def epoch_record(
    epoch: int,
    Z: DenseMatrix,
    gamma: DenseMatrix,
    truth: NDArray[np.int64],
    cfg: ExperimentConfig,
    ms: float,
) -> EpochRecord:
    rate = cfg.mlc_rate_params()
    R = expand_rate(Z, rate)
    Rc = compress_rate_membership(Z, gamma, rate, validate=False)
    pred = spectral_clustering(
        gamma,
        cfg.k,
        seed=derive_seed(cfg.master_seed, "kmeans"),
        restarts=cfg.spectral_restarts,
    )
    return EpochRecord(
        epoch=epoch,
        R=R,
        Rc=Rc,
        deltaR=R - Rc,
        rank_all=numerical_rank(Z, cfg.rank_threshold),
        ranks=per_cluster_ranks(Z, truth, cfg.rank_threshold),
        acc=clustering_accuracy(pred, truth),
        nmi=nmi(pred, truth),
        ms=ms,
    )


def train_mlc(data: LabeledDataset, hp: HeadPair, cfg: ExperimentConfig) -> tuple[HeadPair, list[EpochRecord]]:
    records: list[EpochRecord] = []
    if cfg.epochs_mlc == 0:
        return hp, records

    batch_rng = derive_rng(cfg.master_seed, "mlc")
    aug_rng = derive_rng(cfg.master_seed, "aug")
    feature_state = SgdState.for_params(hp.feature, cfg.feature_optimizer())
    cluster_state = SgdState.for_params(hp.cluster, cfg.cluster_optimizer())
    base = sphere_inputs(data)
    logger.info(
        "Stage 2: %d epoch(s), %s",
        cfg.epochs_mlc,
        f"{cfg.num_aug} augmentation(s)" if cfg.use_augmentation else "no augmentation",
    )

    for epoch in range(cfg.epochs_mlc):
        started = time.perf_counter()
        unconverged = 0
        last = None
        last_idx = None
        for idx in _batches(data.n, cfg.batch_size, cfg.k, batch_rng):
            views = input_views(base[:, idx], cfg, aug_rng)
            step = mlc_step(hp, views, cfg, n_jobs=cfg.n_jobs)
            logger.debug("mlc epoch %d batch of %d: deltaR=%.6f", epoch, len(idx), step.value)

            # both heads step from the same snapshot
            feature, feature_state = sgd_step(hp.feature, step.grad_feature, feature_state, direction=1)
            cluster, cluster_state = sgd_step(hp.cluster, step.grad_cluster, cluster_state, direction=1)
            hp = HeadPair(feature=feature, cluster=cluster)
            unconverged += step.unconverged
            last, last_idx = step, idx

        if unconverged:
            logger.warning("Epoch %d: Sinkhorn missed tolerance on %d view(s)", epoch, unconverged)
        ms = 1000.0 * (time.perf_counter() - started)
        record = epoch_record(epoch, last.Z, last.gamma, data.y[last_idx], cfg, ms)
        records.append(record)
        if (epoch + 1) % cfg.log_every == 0 or epoch + 1 == cfg.epochs_mlc:
            logger.info(
                "Stage 2 epoch %d/%d: R=%.4f Rc=%.4f deltaR=%.4f acc=%.3f",
                epoch + 1,
                cfg.epochs_mlc,
                record.R,
                record.Rc,
                record.deltaR,
                record.acc,
            )

    return hp, records


# ──────────────────────────────────────────────────────────────────────────────
# Readout
# ──────────────────────────────────────────────────────────────────────────────
def _project_full(C: DenseMatrix, cfg: ExperimentConfig) -> SinkhornResult:
    result = sinkhorn_project(gram_similarity(C), cfg.readout_sinkhorn_config(), record=False)
    if not result.converged:
        raise ConvergenceFailure(
            f"full-data Sinkhorn stopped at deviation {result.max_deviation:.3e} after "
            f"{result.iters_used} rounds (tol {cfg.sinkhorn_tol:g}); raise readout_sinkhorn_max_iters"
        )
    return result


def full_membership(data: LabeledDataset, hp: HeadPair, cfg: ExperimentConfig) -> Readout:
    """Features and Gamma over the whole dataset, combined over views as in Stage 2.

    Views come from the "readout" stream. Head outputs are computed in blocks of
    ``full_gamma_cap`` columns; C^T C is always formed globally and every view is
    projected to ``sinkhorn_tol`` or the readout fails.
    """
    views = input_views(sphere_inputs(data), cfg, derive_rng(cfg.master_seed, "readout"))
    Zs = []
    results = []
    for V in views:
        Zs.append(forward_blocks(hp.feature, V, cfg.full_gamma_cap))
        results.append(_project_full(forward_blocks(hp.cluster, V, cfg.full_gamma_cap), cfg))

    Z, _ = average_aug_features(Zs)
    gamma = average_aug_memberships([r.gamma for r in results])
    iters = max(r.iters_used for r in results)
    logger.info("Full-data membership over %d view(s): %d Sinkhorn round(s)", len(views), iters)
    return Readout(
        Z=Z,
        gamma=gamma,
        sinkhorn_iters=iters,
        max_deviation=max(r.max_deviation for r in results),
    )


def readout_metrics(
    readout: Readout,
    labels: NDArray[np.int64],
    truth: NDArray[np.int64],
    cfg: ExperimentConfig,
) -> dict[str, Any]:
    rate = cfg.mlc_rate_params()
    R = expand_rate(readout.Z, rate)
    Rc = compress_rate_membership(readout.Z, readout.gamma, rate, validate=False)
    return {
        "master_seed": cfg.master_seed,
        "n": int(truth.size),
        "k": cfg.k,
        "acc": clustering_accuracy(labels, truth),
        "nmi": nmi(labels, truth),
        "R": R,
        "Rc": Rc,
        "deltaR": R - Rc,
        "rank_all": numerical_rank(readout.Z, cfg.rank_threshold),
        "ranks": per_cluster_ranks(readout.Z, truth, cfg.rank_threshold),
        "sinkhorn_iters": readout.sinkhorn_iters,
        "sinkhorn_converged": bool(readout.max_deviation < cfg.sinkhorn_tol),
        "nmi_variant": NMI_VARIANT,
        "laplacian_variant": LAPLACIAN_VARIANT,
    }


def run_pipeline(
    data: LabeledDataset,
    cfg: ExperimentConfig,
    stage1: Stage1Result | None = None,
) -> PipelineResult:
    """Stage 1, one-shot init, Stage 2, spectral readout. ``stage1`` reuses a finished Stage 1."""
    if stage1 is None:
        stage1 = run_stage1(data, cfg)
    hp = init_membership(stage1.heads, cfg)
    hp, records = train_mlc(data, hp, cfg)
    readout = full_membership(data, hp, cfg)
    labels = spectral_clustering(
        readout.gamma,
        cfg.k,
        seed=derive_seed(cfg.master_seed, "kmeans"),
        restarts=cfg.spectral_restarts,
        n_jobs=cfg.n_jobs,
    )
    metrics = readout_metrics(readout, labels, data.y, cfg)
    logger.info("Readout: acc=%.4f nmi=%.4f ranks=%s", metrics["acc"], metrics["nmi"], metrics["ranks"])
    return PipelineResult(
        heads=hp,
        Z=readout.Z,
        gamma=readout.gamma,
        labels=labels,
        records=records,
        metrics=metrics,
        Z_init=stage1.Z_init,
        Z_tcr=stage1.Z_tcr,
    )


# ──────────────────────────────────────────────────────────────────────────────
# Ablations and stability
# ──────────────────────────────────────────────────────────────────────────────
def ablation_config(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    if name == "full":
        return cfg
    if name == "no-stage-1":
        return cfg.model_copy(update={"use_stage1": False})
    if name == "no-augmentation":
        return cfg.model_copy(update={"use_augmentation": False})
    if name == "no-mlc":
        return cfg.model_copy(update={"epochs_mlc": 0})
    raise ValueError(f"unknown ablation '{name}'; choose from {', '.join(ABLATIONS)}")


def run_ablations(
    data: LabeledDataset,
    cfg: ExperimentConfig,
    names: Sequence[str] = ABLATIONS,
) -> list[AblationRow]:
    shared: Stage1Result | None = None
    rows = []
    for name in names:
        variant = ablation_config(cfg, name)
        logger.info("Ablation '%s'", name)
        if variant.use_stage1:
            if shared is None:
                shared = run_stage1(data, variant)
            result = run_pipeline(data, variant, stage1=shared)
        else:
            result = run_pipeline(data, variant)
        rows.append(AblationRow(name=name, acc=result.metrics["acc"], nmi=result.metrics["nmi"]))
    return rows


def run_seed_sweep(data: LabeledDataset, cfg: ExperimentConfig, seeds: Sequence[int]) -> list[StabilityRow]:
    """Stage 1 once from ``cfg.master_seed``; Stage 2 and the readout once per seed."""
    stage1 = run_stage1(data, cfg)
    rows = []
    for seed in seeds:
        result = run_pipeline(data, cfg.model_copy(update={"master_seed": int(seed)}), stage1=stage1)
        rows.append(StabilityRow(seed=int(seed), acc=result.metrics["acc"], nmi=result.metrics["nmi"]))
    return rows
