from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.core.config import settings
from app.schemas.distill import DistillParams
from app.schemas.netrun import ProtocolParams, RoleConfig
from app.schemas.session import SessionConfig


class RunConfig(BaseModel):
    """Resolved configuration of one CLI invocation (flags over TOML over Settings)."""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(2, ge=2, le=8)
    modulus: Optional[int] = None
    rounds: int = Field(100_000, ge=1)
    channel: str = "identity"
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    sample_fraction: float = Field(0.1, gt=0, lt=1)
    ec_reading: Literal["outcome", "announcement"] = "outcome"
    keep_outside: bool = True
    gate: Literal["confidence", "point"] = "confidence"
    block_size: int = Field(default_factory=lambda: settings.BLOCK_SIZE, ge=1)
    threads: int = Field(default_factory=lambda: settings.THREADS, ge=1)

    # distillation
    k: int = Field(0, ge=0)
    r: Union[int, Literal["auto"]] = 1
    margin: float = Field(10.0, gt=0)
    css_target: float = Field(0.01, gt=0, lt=1)
    z_budget: float = Field(0.005, gt=0)
    matrix: Optional[List[float]] = None
    distill_bits: int = Field(0, ge=0)

    # threshold / verify
    grid: int = Field(2000, ge=1000, le=20000)
    samples: int = Field(10_000, ge=1)

    # netrun
    role: Optional[Literal["alice", "bob", "eve", "local"]] = None
    listen: Optional[str] = None
    connect_alice: Optional[str] = None
    connect_bob: Optional[str] = None
    eve: bool = False

    # outputs
    json_out: Optional[str] = None
    csv: Optional[str] = None
    report: Optional[str] = None

    @field_validator("matrix", mode="before")
    @classmethod
    def split_matrix(cls, v):
        if isinstance(v, str):
            return [float(x) for x in v.split(",")]
        return v

    @property
    def auto_params(self) -> bool:
        return self.r == "auto"

    def session_config(self) -> SessionConfig:
        return SessionConfig(n=self.n, modulus=self.modulus, rounds=self.rounds, channel=self.channel,
                             seed=self.seed, sample_fraction=self.sample_fraction, ec_reading=self.ec_reading,
                             keep_outside=self.keep_outside, gate=self.gate, block_size=self.block_size,
                             threads=self.threads)

    def distill_params(self) -> DistillParams:
        return DistillParams(k=self.k, r=1 if self.auto_params else self.r, margin=self.margin,
                             css_target=self.css_target, z_budget=self.z_budget)

    def protocol_params(self) -> ProtocolParams:
        return ProtocolParams(n=self.n, modulus=self.modulus, rounds=self.rounds, seed=self.seed,
                              sample_fraction=self.sample_fraction, ec_reading=self.ec_reading,
                              keep_outside=self.keep_outside, gate=self.gate, block_size=self.block_size,
                              distill=self.distill_params())

    def role_config(self) -> RoleConfig:
        return RoleConfig(role=self.role, listen=self.listen, connect_alice=self.connect_alice,
                          connect_bob=self.connect_bob, params=self.protocol_params(), channel=self.channel,
                          report=self.report)
