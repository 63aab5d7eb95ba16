"""Basic CRUD operations for the run registry."""
from sqlalchemy.orm import Session
from typing import Optional, List
from . import models, schemas

# Run operations
def get_run(db: Session, run_id: int) -> Optional[models.Run]:
    """Get a run by its ID."""
    return db.query(models.Run).filter(models.Run.id == run_id).first()

def get_runs(db: Session, benchmark: Optional[str] = None, skip: int = 0, limit: int = 100) -> List[models.Run]:
    """Get runs, newest first, optionally for one benchmark."""
    query = db.query(models.Run)
    if benchmark:
        query = query.filter(models.Run.benchmark == benchmark)
    return query.order_by(models.Run.id.desc()).offset(skip).limit(limit).all()

def create_run(db: Session, run: schemas.RunRecordCreate) -> models.Run:
    """Create a new run record."""
    db_run = models.Run(**run.model_dump())
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run

def update_run(db: Session, run_id: int, run: schemas.RunRecordUpdate) -> Optional[models.Run]:
    """Update a run record."""
    db_run = get_run(db, run_id)
    if db_run:
        update_data = run.model_dump(exclude_unset=True)
        for field, value in update_data.items():
            setattr(db_run, field, value)
        db.commit()
        db.refresh(db_run)
    return db_run

# Stage operations
def add_stage_records(db: Session, stages: List[schemas.StageRecordCreate]) -> List[models.RunStage]:
    """Attach stage summaries to their runs."""
    db_stages = [models.RunStage(**stage.model_dump()) for stage in stages]
    db.add_all(db_stages)
    db.commit()
    for db_stage in db_stages:
        db.refresh(db_stage)
    return db_stages
