from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class DistillParams(BaseModel):
    k: int = Field(0, ge=0)
    r: int = Field(1, ge=1)
    css_target: float = Field(0.01, gt=0, lt=1)
    z_budget: float = Field(0.005, gt=0)
    # numeric stand-in for "much greater than"
    margin: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def check_budget(self):
        if self.r % 2 == 0:
            raise ValueError(f"r must be odd, got {self.r}")
        if not self.z_budget < self.css_target:
            raise ValueError("z_budget must be smaller than css_target")
        return self


class MatrixRead(BaseModel):
    p_I: float
    p_x: float
    p_y: float
    p_z: float


class RoundMargins(BaseModel):
    k: int
    matrix: MatrixRead
    r: int
    # None where the margin is unbounded
    majority_margin: Optional[float] = None
    existence_margin: Optional[float] = None
    feasible: bool


class ParamSelection(BaseModel):
    feasible: bool
    params: Optional[DistillParams] = None
    reason: Optional[str] = None
    rounds: List[RoundMargins] = []


class DistillReport(BaseModel):
    input: MatrixRead
    secure_condition: bool
    selection: ParamSelection
    x_fail: Optional[float] = None
    z_fail: Optional[float] = None
    residual: Optional[float] = None
    residual_ok: Optional[bool] = None
    expected_survival: Optional[float] = None
    simulation: Optional[Dict] = None
