"""
storage_service.py
------------------
On-disk artifacts.

MLCMAT01 matrix file:
    8 bytes   magic  b"MLCMAT01"
    8 bytes   rows   uint64 little-endian
    8 bytes   cols   uint64 little-endian
    rows*cols float64 little-endian values, row-major

Also: label files (one integer per line), parameter directories (one matrix per
tensor plus manifest.json), dataset directories, epoch-record CSV and the
metrics JSON text file.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from app.core.errors import ArtifactError
from app.schemas.experiment import EpochRecord
from app.services.datagen_service import LabeledDataset
from app.services.model_service import HeadPair, MlpParams
from app.services.numerics_service import DenseMatrix

logger = logging.getLogger(__name__)

MAGIC = b"MLCMAT01"
_HEADER = struct.Struct("<QQ")

DATA_MATRIX = "X.mlcmat"
DATA_LABELS = "labels.txt"
MANIFEST = "manifest.json"


# ── matrices ────────────────────────────────────────────────────────────────
def write_matrix(path: Path, M: ArrayLike) -> Path:
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ArtifactError(f"only 2-d matrices can be written, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = arr.shape
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(rows, cols))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C"))
    return path


def read_matrix(path: Path) -> DenseMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ArtifactError(f"{path} is not an MLCMAT01 file")
    offset = len(MAGIC)
    if len(raw) < offset + _HEADER.size:
        raise ArtifactError(f"{path} has a truncated header")
    rows, cols = _HEADER.unpack_from(raw, offset)
    offset += _HEADER.size
    expected = rows * cols * 8
    if len(raw) - offset != expected:
        raise ArtifactError(f"{path}: expected {expected} value bytes, found {len(raw) - offset}")
    values = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset)
    return values.reshape(rows, cols).astype(np.float64)


# ── labels ──────────────────────────────────────────────────────────────────
def write_labels(path: Path, labels: ArrayLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(labels, dtype=np.int64).tolist()
    path.write_text("".join(f"{v}\n" for v in values), encoding="utf-8")
    return path


def read_labels(path: Path) -> NDArray[np.int64]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    values = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(int(line))
        except ValueError as exc:
            raise ArtifactError(f"{path}:{lineno}: not an integer label: {line!r}") from exc
    return np.asarray(values, dtype=np.int64)


# ── datasets ────────────────────────────────────────────────────────────────
def save_dataset(directory: Path, data: LabeledDataset) -> Path:
    directory = Path(directory)
    write_matrix(directory / DATA_MATRIX, data.X)
    write_labels(directory / DATA_LABELS, data.y)
    return directory


def load_dataset(directory: Path) -> LabeledDataset:
    directory = Path(directory)
    return LabeledDataset(X=read_matrix(directory / DATA_MATRIX), y=read_labels(directory / DATA_LABELS))


# ── parameters ──────────────────────────────────────────────────────────────
def save_params(directory: Path, params: MlpParams) -> Path:
    directory = Path(directory)
    manifest: dict[str, Any] = {}
    for name, tensor in params.tensors():
        write_matrix(directory / f"{name}.mlcmat", tensor)
        manifest[name] = list(tensor.shape)
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_params(directory: Path) -> MlpParams:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise ArtifactError(f"no {MANIFEST} in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    tensors: dict[str, NDArray[np.float64]] = {}
    for name in ("w1", "b1", "w2", "b2"):
        if name not in manifest:
            raise ArtifactError(f"{manifest_path} does not list tensor {name!r}")
        shape = tuple(manifest[name])
        tensors[name] = read_matrix(directory / f"{name}.mlcmat").reshape(shape)
    return MlpParams(**tensors)


def save_head_pair(directory: Path, hp: HeadPair) -> Path:
    directory = Path(directory)
    save_params(directory / "feature", hp.feature)
    save_params(directory / "cluster", hp.cluster)
    return directory


def load_head_pair(directory: Path) -> HeadPair:
    directory = Path(directory)
    feature = load_params(directory / "feature")
    cluster_dir = directory / "cluster"
    cluster = load_params(cluster_dir) if (cluster_dir / MANIFEST).exists() else feature.copy()
    return HeadPair(feature=feature, cluster=cluster)


# ── tables and metrics ──────────────────────────────────────────────────────
def write_records_csv(path: Path, records: Sequence[EpochRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.to_row() for r in records]).to_csv(path, index=False)
    return path


def write_table_csv(path: Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False)
    return path


def write_metrics(path: Path, metrics: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
