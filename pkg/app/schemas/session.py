from typing import Dict, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.core.config import settings
from app.services.channels import parse_channel
from app.services.field import field_spec


class SessionConfig(BaseModel):
    n: int = Field(2, ge=2, le=8)
    rounds: int = Field(..., ge=1)
    channel: str = "identity"
    sample_fraction: float = Field(0.1, gt=0, lt=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    ec_reading: Literal["outcome", "announcement"] = "outcome"
    keep_outside: bool = True
    # "confidence": gate on the worst case of the Wilson bounds; "point": on the estimates
    gate: Literal["confidence", "point"] = "confidence"
    modulus: Optional[int] = None
    block_size: int = Field(default_factory=lambda: settings.BLOCK_SIZE, ge=1)
    threads: int = Field(default_factory=lambda: settings.THREADS, ge=1)

    @model_validator(mode="after")
    def channel_must_parse(self):
        parse_channel(self.channel, field_spec(self.n, self.modulus))
        return self


class Estimate(BaseModel):
    value: Optional[float] = None
    low: Optional[float] = None
    high: Optional[float] = None
    half_width: Optional[float] = None
    successes: int = 0
    trials: int = 0

    @property
    def defined(self) -> bool:
        return self.value is not None


class SessionStats(BaseModel):
    status: Literal["ok", "insufficient-sift"]
    rounds: int
    raw_key_length: int
    in_pair_sifted: int
    outside_sifted: int
    sample_size: int
    final_key_length: int
    e_b: Estimate
    e_b_all: Estimate
    e_c: Estimate
    ec_reading: str
    counts: Dict[str, int] = {}
    pm_lhs: Optional[float] = None
    pm_lhs_bound: Optional[float] = None
    verdict: Optional[bool] = None
    config: SessionConfig
