from datetime import datetime
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict

Command = Literal["simulate", "analyze", "distill", "threshold", "verify", "netrun"]


class RunCreate(BaseModel):
    command: Command
    n: Optional[int] = None
    seed: Optional[int] = None
    config: Dict[str, Any] = {}
    result: Dict[str, Any] = {}
    verdict: Optional[str] = None


class RunRead(RunCreate):
    id: int
    created_at: datetime

    model_config = ConfigDict(from_attributes=True)
