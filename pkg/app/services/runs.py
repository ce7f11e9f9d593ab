from typing import List, Optional
from sqlalchemy.orm import Session

from app.models import Run
from app.schemas.run import RunCreate

def list_runs(db: Session, command: Optional[str] = None) -> List[Run]:
    query = db.query(Run)
    if command:
        query = query.filter(Run.command == command)
    return query.order_by(Run.created_at.desc(), Run.id.desc()).all()

def get_run(db: Session, run_id: int) -> Optional[Run]:
    return db.get(Run, run_id)

def create_run(db: Session, payload: RunCreate) -> Run:
    run = Run(**payload.model_dump())
    db.add(run)
    db.commit()
    db.refresh(run)
    return run

def delete_run(db: Session, run: Run) -> None:
    db.delete(run)
    db.commit()
