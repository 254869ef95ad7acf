from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class OptimizerConfig(BaseModel):
    """SGD with momentum and weight decay for one head."""

    model_config = ConfigDict(frozen=True)

    lr: float = Field(default=1e-2, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
