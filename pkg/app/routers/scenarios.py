from fastapi import APIRouter, BackgroundTasks, Depends, File, HTTPException, UploadFile
from fastapi.responses import FileResponse
from sqlalchemy.orm import Session
from typing import Any, Dict, List, Optional
from pydantic import BaseModel
from pathlib import Path
from datetime import datetime
import shutil
import logging

from app import config
from app.models.database import SessionLocal, get_db
from app.models.run import ScenarioRun
from app.models.scenario_config import ScenarioConfig
from app.services.scenario_runner import run_scenario

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/scenarios", tags=["Scenarios"])

REPLAY_STREAM = "replay_observations.csv"

class ScenarioRunResponse(BaseModel):
    id: int
    name: str
    config_hash: str
    status: str
    output_dir: Optional[str]
    n_replicas: int
    observation_stream: Optional[str]
    error: Optional[str]
    created_at: datetime
    finished_at: Optional[datetime]

    class Config:
        from_attributes = True

class ScenarioRunDetail(ScenarioRunResponse):
    config: Dict[str, Any]
    artifacts: List[str] = []

def _run_dir(run_id: int) -> Path:
    return Path(config.OUTPUT_DIR) / f"run_{run_id}"

def execute_run(run_id: int):
    """Background job: run the scenario and record the outcome"""
    db = SessionLocal()
    try:
        run = db.query(ScenarioRun).filter(ScenarioRun.id == run_id).first()
        if run is None:
            logger.warning(f"Run {run_id} vanished before it started")
            return
        run.status = "running"
        db.commit()
        scenario = ScenarioConfig.model_validate(run.config)
        if run.observation_stream:
            scenario = scenario.model_copy(update={"observation_stream": run.observation_stream})
        try:
            run_scenario(scenario, run.output_dir)
            run.status = "completed"
        except Exception as e:
            run.status = "failed"
            run.error = str(e)
        run.finished_at = datetime.utcnow()
        db.commit()
        logger.info(f"Run {run_id} finished with status {run.status}")
    finally:
        db.close()

def _queue(db: Session, scenario: ScenarioConfig, background_tasks: BackgroundTasks, stream: Optional[str] = None) -> ScenarioRun:
    run = ScenarioRun(
        name=scenario.name,
        config_hash=scenario.config_hash(),
        config=scenario.model_dump(mode="json"),
        status="queued",
        n_replicas=scenario.replicas,
        observation_stream=stream,
    )
    db.add(run)
    db.commit()
    db.refresh(run)
    run.output_dir = str(_run_dir(run.id))
    db.commit()
    db.refresh(run)
    background_tasks.add_task(execute_run, run.id)
    return run

def _get_run(db: Session, run_id: int) -> ScenarioRun:
    run = db.query(ScenarioRun).filter(ScenarioRun.id == run_id).first()
    if not run:
        raise HTTPException(status_code=404, detail="Scenario run not found")
    return run

@router.post("/", response_model=ScenarioRunResponse)
def create_run(scenario: ScenarioConfig, background_tasks: BackgroundTasks, db: Session = Depends(get_db)):
    """Queue a scenario run"""
    return _queue(db, scenario, background_tasks)

@router.get("/", response_model=List[ScenarioRunResponse])
def list_runs(skip: int = 0, limit: int = 100, status: Optional[str] = None, db: Session = Depends(get_db)):
    query = db.query(ScenarioRun)
    if status:
        query = query.filter(ScenarioRun.status == status)
    return query.order_by(ScenarioRun.id).offset(skip).limit(limit).all()

@router.get("/{run_id}", response_model=ScenarioRunDetail)
def get_run(run_id: int, db: Session = Depends(get_db)):
    run = _get_run(db, run_id)
    out = Path(run.output_dir) if run.output_dir else None
    artifacts = sorted(p.name for p in out.iterdir() if p.is_file()) if out and out.is_dir() else []
    detail = ScenarioRunDetail.model_validate(run, from_attributes=True)
    detail.artifacts = artifacts
    return detail

@router.delete("/{run_id}")
def delete_run(run_id: int, db: Session = Depends(get_db)):
    """Delete a run record together with its output directory"""
    run = _get_run(db, run_id)
    if run.status == "running":
        raise HTTPException(status_code=409, detail="Cannot delete a running scenario")
    if run.output_dir:
        shutil.rmtree(run.output_dir, ignore_errors=True)
    db.delete(run)
    db.commit()
    return {"message": "Scenario run deleted successfully"}

@router.get("/{run_id}/artifacts/{name}")
def get_artifact(run_id: int, name: str, db: Session = Depends(get_db)):
    run = _get_run(db, run_id)
    if "/" in name or "\\" in name or name.startswith("."):
        raise HTTPException(status_code=404, detail="Artifact not found")
    path = Path(run.output_dir or "") / name
    if not path.is_file():
        raise HTTPException(status_code=404, detail="Artifact not found")
    media = "application/json" if path.suffix == ".json" else "text/csv"
    return FileResponse(path, media_type=media, filename=name)

@router.post("/{run_id}/replay", response_model=ScenarioRunResponse)
async def replay_run(
    run_id: int,
    background_tasks: BackgroundTasks,
    stream_file: UploadFile = File(...),
    db: Session = Depends(get_db)
):
    """Re-run a scenario on a recorded observation stream"""
    source = _get_run(db, run_id)
    if not stream_file.filename.endswith(".csv"):
        raise HTTPException(status_code=400, detail="Observation stream must be a CSV file")
    content = await stream_file.read()
    staging = Path(config.OUTPUT_DIR) / "replays"
    staging.mkdir(parents=True, exist_ok=True)
    path = staging / f"run_{run_id}_{source.config_hash[:12]}_{len(content)}.csv"
    path.write_bytes(content)
    scenario = ScenarioConfig.model_validate(source.config)
    return _queue(db, scenario, background_tasks, stream=str(path.resolve()))
