from typing import Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from app.schemas.distill import DistillParams


class AnalyzeRequest(BaseModel):
    n: int = Field(2, ge=2, le=8)
    channel: str = "identity"
    modulus: Optional[int] = None


class EDConditionRead(BaseModel):
    passed: bool
    lhs: float
    e00_greatest: bool


class ConsistencyRead(BaseModel):
    sum_rule: bool
    e_c_relation: bool
    normalization: bool


class AnalysisReport(BaseModel):
    channel: str
    n: int
    unitary: bool
    # "a,l" -> e_{a,l}
    e: Optional[Dict[str, float]] = None
    e_b: Optional[float] = None
    e_c: float
    ed_condition: Optional[EDConditionRead] = None
    consistency: Optional[ConsistencyRead] = None
    error_matrix: Optional[Dict[str, float]] = None
    pm_condition: Optional[bool] = None


class DistillRequest(BaseModel):
    n: int = Field(2, ge=2, le=8)
    modulus: Optional[int] = None
    matrix: Optional[List[float]] = None
    channel: Optional[str] = None
    auto_params: bool = True
    params: DistillParams = DistillParams()

    @model_validator(mode="after")
    def one_source(self):
        if (self.matrix is None) == (self.channel is None):
            raise ValueError("give exactly one of matrix or channel")
        if self.matrix is not None and len(self.matrix) != 4:
            raise ValueError("matrix needs four entries p_I, p_x, p_y, p_z")
        return self
