from fastapi import APIRouter, HTTPException, status

from app.schemas.analysis import AnalysisReport, AnalyzeRequest, DistillRequest
from app.schemas.distill import DistillReport
from app.schemas.session import SessionConfig, SessionStats
from app.schemas.threshold import ThresholdRequest, ThresholdSummary
from app.services.channels import parse_channel
from app.services.field import field_spec
import app.services.analysis as analysis_svc
import app.services.distill as distill_svc
import app.services.protocol as protocol_svc
import app.services.threshold as threshold_svc

router = APIRouter(prefix="/analysis", tags=["analysis"])

MAX_HTTP_ROUNDS = 200_000

@router.post("/analyze", response_model=AnalysisReport)
def analyze(payload: AnalyzeRequest):
    model = parse_channel(payload.channel, field_spec(payload.n, payload.modulus))
    return analysis_svc.analysis_report(model)

@router.post("/distill", response_model=DistillReport)
def distill(payload: DistillRequest):
    m = distill_svc.resolve_matrix(payload.matrix, payload.channel, payload.n, payload.modulus)
    return distill_svc.distill_report(m, payload.params, auto=payload.auto_params)

@router.post("/threshold", response_model=ThresholdSummary)
def threshold(payload: ThresholdRequest):
    summary, _ = threshold_svc.e_max_scan(payload.n, payload.grid)
    return summary

@router.post("/simulate", response_model=SessionStats)
def simulate(payload: SessionConfig):
    if payload.rounds > MAX_HTTP_ROUNDS:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST,
                            detail=f"rounds above {MAX_HTTP_ROUNDS} must go through the command line")
    return protocol_svc.run_session(payload).stats
