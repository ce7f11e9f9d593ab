from typing import List, Optional

from pydantic import BaseModel, Field


class ThresholdRequest(BaseModel):
    n: int = Field(2, ge=2, le=8)
    grid: int = Field(2000, ge=1000, le=20000)


class Witness(BaseModel):
    e_b: float
    e_c: float
    e_11: float
    f: float
    status: str


class ThresholdSummary(BaseModel):
    n: int
    grid: int
    resolution: float
    e_max: float
    certified: float
    # status of the first grid point that is not strictly feasible
    limit_status: str
    violations_below_half: int
    witnesses: List[Witness] = []


class IffScan(BaseModel):
    n: int
    points: int
    positive_below_half: int
    below_half: int
    min_below_half: Optional[float] = None
    at_half: float
    passed: bool
