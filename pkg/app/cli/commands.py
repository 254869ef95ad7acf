"""
commands.py
-----------
One handler per CLI verb. Each handler resolves the config, does its work
through the services and writes its artifacts plus ``run-meta.txt`` under the
output directory.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from app.cli.config_loader import load_config, write_run_meta
from app.core.errors import UsageError
from app.core.seeding import derive_seed
from app.schemas.cli import CliCommand
from app.schemas.experiment import ExperimentConfig
from app.services import storage_service as storage
from app.services.datagen_service import LabeledDataset, make_synthetic_dataset
from app.services.evalmetrics_service import cosine_similarity_matrix, spectral_clustering
from app.services.pipeline_service import (
    PipelineResult,
    full_membership,
    init_membership,
    readout_metrics,
    run_ablations,
    run_pipeline,
    run_seed_sweep,
    run_stage1,
    train_mlc,
)

logger = logging.getLogger(__name__)

RUN_META = "run-meta.txt"
PARAMS_DIR = "params"


# ──────────────────────────────────────────────────────────────────────────────
# Helpers
# ──────────────────────────────────────────────────────────────────────────────
def resolve_config(cmd: CliCommand) -> ExperimentConfig:
    cfg = load_config(cmd.config_path)
    if cmd.seed is not None:
        cfg = cfg.model_copy(update={"master_seed": cmd.seed})
    return cfg


def synthesize(cfg: ExperimentConfig) -> LabeledDataset:
    return make_synthetic_dataset(cfg.synth_config(derive_seed(cfg.master_seed, "data")))


def _dataset(cmd: CliCommand, cfg: ExperimentConfig) -> LabeledDataset:
    if cmd.data_dir is not None:
        return storage.load_dataset(cmd.data_dir)
    logger.info("No --data given; generating the synthetic dataset from seed %d", cfg.master_seed)
    return synthesize(cfg)


def _require_params(cmd: CliCommand) -> Path:
    if cmd.params_dir is None:
        raise UsageError(f"'{cmd.verb}' needs --params DIR")
    return cmd.params_dir


def _write_readout(out: Path, Z: np.ndarray, gamma: np.ndarray, labels: np.ndarray, metrics: dict) -> None:
    storage.write_matrix(out / "Z.mlcmat", Z)
    storage.write_matrix(out / "gamma.mlcmat", gamma)
    storage.write_matrix(out / "similarity.mlcmat", cosine_similarity_matrix(Z))
    storage.write_labels(out / "labels.txt", labels)
    storage.write_table_csv(
        out / "ranks.csv",
        [{"cluster": j, "rank": r} for j, r in enumerate(metrics["ranks"])],
    )
    storage.write_metrics(out / "metrics.json", metrics)


def _write_pipeline(out: Path, result: PipelineResult) -> None:
    storage.save_head_pair(out / PARAMS_DIR, result.heads)
    storage.write_matrix(out / "Z_init.mlcmat", result.Z_init)
    storage.write_matrix(out / "Z_tcr.mlcmat", result.Z_tcr)
    storage.write_records_csv(out / "records.csv", result.records)
    _write_readout(out, result.Z, result.gamma, result.labels, result.metrics)


# ──────────────────────────────────────────────────────────────────────────────
# Verbs
# ──────────────────────────────────────────────────────────────────────────────
def cmd_synth(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    data = synthesize(cfg)
    storage.save_dataset(cmd.output_dir, data)
    logger.info("Wrote %d points to %s", data.n, cmd.output_dir)


def cmd_train_tcr(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    data = _dataset(cmd, cfg)
    stage1 = run_stage1(data, cfg)
    storage.save_head_pair(cmd.output_dir / PARAMS_DIR, stage1.heads)
    storage.write_matrix(cmd.output_dir / "Z_init.mlcmat", stage1.Z_init)
    storage.write_matrix(cmd.output_dir / "Z_tcr.mlcmat", stage1.Z_tcr)


def cmd_train_mlc(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    data = _dataset(cmd, cfg)
    hp = init_membership(storage.load_head_pair(_require_params(cmd)), cfg)
    hp, records = train_mlc(data, hp, cfg)
    storage.save_head_pair(cmd.output_dir / PARAMS_DIR, hp)
    storage.write_records_csv(cmd.output_dir / "records.csv", records)


def cmd_eval(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    data = _dataset(cmd, cfg)
    hp = storage.load_head_pair(_require_params(cmd))
    readout = full_membership(data, hp, cfg)
    labels = spectral_clustering(
        readout.gamma,
        cfg.k,
        seed=derive_seed(cfg.master_seed, "kmeans"),
        restarts=cfg.spectral_restarts,
        n_jobs=cfg.n_jobs,
    )
    _write_readout(cmd.output_dir, readout.Z, readout.gamma, labels, readout_metrics(readout, labels, data.y, cfg))


def cmd_full(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    data = _dataset(cmd, cfg)
    _write_pipeline(cmd.output_dir, run_pipeline(data, cfg))


def cmd_ablate(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    data = _dataset(cmd, cfg)
    rows = run_ablations(data, cfg)
    storage.write_table_csv(cmd.output_dir / "ablation.csv", [r.model_dump() for r in rows])
    storage.write_metrics(cmd.output_dir / "metrics.json", {r.name: {"acc": r.acc, "nmi": r.nmi} for r in rows})


def cmd_stability(cmd: CliCommand, cfg: ExperimentConfig) -> None:
    if not cmd.seeds:
        raise UsageError("'stability' needs --seeds, e.g. --seeds 0,1,2")
    data = _dataset(cmd, cfg)
    rows = run_seed_sweep(data, cfg, cmd.seeds)
    frame = pd.DataFrame([r.model_dump() for r in rows])
    storage.write_table_csv(cmd.output_dir / "stability.csv", frame.to_dict("records"))
    summary = {
        "seeds": [int(s) for s in cmd.seeds],
        "acc_mean": float(frame["acc"].mean()),
        "acc_std": float(frame["acc"].std(ddof=0)),
        "nmi_mean": float(frame["nmi"].mean()),
        "nmi_std": float(frame["nmi"].std(ddof=0)),
    }
    storage.write_metrics(cmd.output_dir / "metrics.json", summary)


HANDLERS: dict[str, Callable[[CliCommand, ExperimentConfig], None]] = {
    "synth": cmd_synth,
    "train-tcr": cmd_train_tcr,
    "train-mlc": cmd_train_mlc,
    "eval": cmd_eval,
    "full": cmd_full,
    "ablate": cmd_ablate,
    "stability": cmd_stability,
}


def run_command(cmd: CliCommand) -> None:
    cfg = resolve_config(cmd)
    cmd.output_dir.mkdir(parents=True, exist_ok=True)
    HANDLERS[cmd.verb](cmd, cfg)
    write_run_meta(cmd.output_dir / RUN_META, cfg, cmd.verb)
