from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class SinkhornConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float = Field(default=0.175, gt=0.0, description="Entropy coefficient")
    max_iters: int = Field(default=200, ge=1, description="Row+column normalization rounds")
    tol: float = Field(default=1e-6, gt=0.0, description="Stop when max marginal deviation < tol")
