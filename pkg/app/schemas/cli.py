from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field

Verb = Literal["synth", "train-tcr", "train-mlc", "eval", "full", "ablate", "stability"]


class CliCommand(BaseModel):
    verb: Verb
    config_path: Optional[Path] = None
    output_dir: Path
    seed: Optional[int] = Field(default=None, ge=0)
    data_dir: Optional[Path] = None
    params_dir: Optional[Path] = None
    seeds: list[int] = Field(default_factory=list)
