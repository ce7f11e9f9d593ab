from .run import RunCreate, RunRead
from .session import SessionConfig, SessionStats, Estimate
from .distill import DistillParams, DistillReport, ParamSelection
from .threshold import ThresholdRequest, ThresholdSummary, IffScan

__all__ = [
    "RunCreate", "RunRead",
    "SessionConfig", "SessionStats", "Estimate",
    "DistillParams", "DistillReport", "ParamSelection",
    "ThresholdRequest", "ThresholdSummary", "IffScan",
]
