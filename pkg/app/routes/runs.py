from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.orm import Session
from typing import List, Optional

from app.db.session import get_db
from app.schemas import RunRead
import app.services.runs as svc

router = APIRouter(prefix="/runs", tags=["runs"])

@router.get("/", response_model=List[RunRead])
def list_runs(command: Optional[str] = None, db: Session = Depends(get_db)):
    return svc.list_runs(db, command)

@router.get("/{run_id}", response_model=RunRead)
def get_run(run_id: int, db: Session = Depends(get_db)):
    run = svc.get_run(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run

@router.delete("/{run_id}", status_code=status.HTTP_204_NO_CONTENT)
def delete_run(run_id: int, db: Session = Depends(get_db)):
    run = svc.get_run(db, run_id)
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    svc.delete_run(db, run)
    return None
