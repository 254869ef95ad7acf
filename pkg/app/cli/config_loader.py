"""
config_loader.py
----------------
Plain-text experiment configuration.

    # comment
    eta = 0.175
    epochs_mlc = 200      # trailing comments are allowed
    tcr_lambda = none     # none selects the batch-size default

One ``key = value`` per line; keys are the fields of ``ExperimentConfig``.
Unknown or repeated keys are rejected, missing keys keep their defaults.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from app import __version__
from app.core.errors import ConfigError
from app.schemas.experiment import ExperimentConfig

logger = logging.getLogger(__name__)

NONE_TOKENS = {"none", "null"}


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_config_text(text: str) -> ExperimentConfig:
    known = ExperimentConfig.model_fields
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", line=lineno)
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in lines:
            raise ConfigError(f"key {key!r} already set on line {lines[key]}", line=lineno)
        if value == "":
            raise ConfigError(f"missing value for {key!r}", line=lineno)
        values[key] = None if value.lower() in NONE_TOKENS else value
        lines[key] = lineno

    try:
        return ExperimentConfig(**values)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = str(first["loc"][0]) if first.get("loc") else None
        raise ConfigError(f"{field}: {first['msg']}", line=lines.get(field)) from exc


def load_config(path: Path | str | None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{name} = {_format_value(getattr(cfg, name))}\n" for name in ExperimentConfig.model_fields)


def write_run_meta(path: Path, cfg: ExperimentConfig, verb: str) -> Path:
    """Resolved config in loadable form, with the run context as comments."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"# mlc run-meta\n# version = {__version__}\n# verb = {verb}\n# seed = {cfg.master_seed}\n"
    path.write_text(header + render_config(cfg), encoding="utf-8")
    logger.info("Run metadata written to %s", path)
    return path
