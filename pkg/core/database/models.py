from sqlalchemy import Column, Integer, String, ForeignKey, Text, DateTime, Float
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func
from .base import Base

class Run(Base):
    """One solve invocation and its headline results."""
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)

    run_dir = Column(String, nullable=False, unique=True)
    benchmark = Column(String, nullable=False)
    seed = Column(Integer, nullable=False)
    mode = Column(String, nullable=False)  # exact, shots, stacked
    optimizer = Column(String, nullable=False)  # cmaes, adam, lbfgs
    status = Column(String, nullable=False)  # running, completed, failed

    best_loss = Column(Float)
    final_loss = Column(Float)
    max_abs_error = Column(Float)  # Worst field
    iterations = Column(Integer)
    evaluations = Column(Integer)
    wall_time = Column(Float)  # Seconds
    message = Column(Text)

    # Metadata
    created_at = Column(DateTime, server_default=func.now())
    updated_at = Column(DateTime, server_default=func.now(), onupdate=func.now())

    # Relationships
    stages = relationship("RunStage", back_populates="run", cascade="all, delete")

class RunStage(Base):
    """Per-stage summary of a shot-scheduled run."""
    __tablename__ = "run_stages"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey('runs.id', ondelete='CASCADE'), nullable=False)

    stage = Column(Integer, nullable=False)
    shots = Column(Integer, nullable=False)
    sigma_init = Column(Float, nullable=False)
    iterations = Column(Integer, nullable=False)
    evaluations = Column(Integer, nullable=False)
    lowest_loss = Column(Float, nullable=False)
    avg_eval_seconds = Column(Float, nullable=False)

    # Relationships
    run = relationship("Run", back_populates="stages")
