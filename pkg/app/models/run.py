from sqlalchemy import Column, Integer, String, Text, DateTime, JSON
from app.models.database import Base
from datetime import datetime

RUN_STATUSES = ("queued", "running", "completed", "failed")

class ScenarioRun(Base):
    __tablename__ = "scenario_runs"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String, nullable=False)
    config_hash = Column(String(64), nullable=False, index=True)
    config = Column(JSON, nullable=False)  # canonical ScenarioConfig dump

    # Lifecycle
    status = Column(String, default="queued")  # queued, running, completed, failed
    output_dir = Column(String)
    n_replicas = Column(Integer, default=1)
    observation_stream = Column(String)  # set for replay runs
    error = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)
