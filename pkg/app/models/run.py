from datetime import datetime
from sqlalchemy import Column, Integer, DateTime, String, JSON
from app.db.session import Base

class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String(20), nullable=False, index=True)
    n = Column(Integer, nullable=True)
    seed = Column(Integer, nullable=True)
    config = Column(JSON, nullable=False, default=dict)
    result = Column(JSON, nullable=False, default=dict)
    verdict = Column(String(40), nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)
