from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class RateParams(BaseModel):
    """Precision and feature dimension of R(Z; eps)."""

    model_config = ConfigDict(frozen=True)

    epsilon_sq: float = Field(..., gt=0.0, description="Squared precision eps^2")
    d: int = Field(..., ge=1, description="Feature dimension")


class TcrParams(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    epsilon_sq: float = Field(..., gt=0.0, description="Squared precision eps^2")
    lam: float = Field(..., ge=0.0, alias="lambda", description="Weight of the view-alignment term")
