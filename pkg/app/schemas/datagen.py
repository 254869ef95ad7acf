from __future__ import annotations

import math

from pydantic import BaseModel, ConfigDict, Field


class SynthConfig(BaseModel):
    """Two manifolds on the sphere: a wavy closed curve and a Gaussian blob at the pole."""

    model_config = ConfigDict(frozen=True)

    amp: float = Field(default=0.2, description="Curve amplitude A")
    omega: float = Field(default=5.0, description="Curve frequency")
    noise_std: float = Field(default=math.sqrt(0.05), ge=0.0, description="Std of additive noise")
    points_per_manifold: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
