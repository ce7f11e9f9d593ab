from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.core.config import settings
from app.schemas.distill import DistillParams
from app.schemas.session import SessionConfig


class ProtocolParams(BaseModel):
    """Parameters Alice and Bob must agree on; exchanged in the HELLO frames."""

    n: int = Field(2, ge=2, le=8)
    modulus: Optional[int] = None
    rounds: int = Field(10_000, ge=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED, ge=0)
    sample_fraction: float = Field(0.1, gt=0, lt=1)
    ec_reading: Literal["outcome", "announcement"] = "outcome"
    keep_outside: bool = True
    gate: Literal["confidence", "point"] = "confidence"
    block_size: int = Field(default_factory=lambda: settings.BLOCK_SIZE, ge=1)
    distill: DistillParams = DistillParams()

    def session_config(self, channel: str = "identity") -> SessionConfig:
        return SessionConfig(n=self.n, modulus=self.modulus, rounds=self.rounds, channel=channel, seed=self.seed,
                             sample_fraction=self.sample_fraction, ec_reading=self.ec_reading,
                             keep_outside=self.keep_outside, gate=self.gate, block_size=self.block_size)


class RoleConfig(BaseModel):
    role: Literal["alice", "bob", "eve"]
    listen: Optional[str] = None
    connect_alice: Optional[str] = None
    connect_bob: Optional[str] = None
    params: ProtocolParams = ProtocolParams()
    # applied by eve only
    channel: str = "identity"
    report: Optional[str] = None

    @model_validator(mode="after")
    def endpoints(self):
        if self.role == "eve" and not (self.connect_alice and self.connect_bob):
            raise ValueError("eve needs --connect-alice and --connect-bob")
        if self.role == "alice" and not self.listen:
            raise ValueError("alice needs --listen")
        if self.role == "bob" and not (self.listen or self.connect_alice):
            raise ValueError("bob needs --listen (behind eve) or --connect-alice")
        return self


class RoleReport(BaseModel):
    role: str
    status: Literal["ok", "aborted", "disconnected", "insufficient-sift"]
    reason: Optional[str] = None
    stats: Dict = {}
    raw_key_length: int = 0
    final_key_length: int = 0
    final_key: str = ""
    frames: int = 0
    transcript_sha256: str = ""
    actions: Dict[str, int] = {}
    audit: List[Dict] = []
