from datetime import datetime
from enum import Enum
from typing import Annotated, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.services.encoding_service import EncodingConfig, EvaluationSettings, FloatTuple, IntTuple
from core.services.loss_service import BCStrategy
from core.services.problem_service import BurgersProblem, HypoelasticProblem

# Enums for validation
class Benchmark(str, Enum):
    HYPOELASTIC = "hypoelastic"
    BURGERS = "burgers"

class OptimizerKind(str, Enum):
    CMAES = "cmaes"
    ADAM = "adam"
    LBFGS = "lbfgs"

class RunStatus(str, Enum):
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"

ProblemConfig = Annotated[Union[HypoelasticProblem, BurgersProblem], Field(discriminator="kind")]

# Run configuration sections
class StageConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shots: int = Field(ge=1)
    sigma_init: float = Field(gt=0)
    max_iterations: int = Field(default=100, ge=1)
    threshold: Optional[float] = None

class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: OptimizerKind = OptimizerKind.LBFGS
    max_iterations: int = Field(default=500, ge=1)
    # Adam steps taken before L-BFGS, counted inside max_iterations
    warmup_iterations: int = Field(default=0, ge=0)
    learning_rate: float = Field(default=0.1, gt=0)
    gtol: float = Field(default=1e-10, ge=0)
    sigma_init: float = Field(default=0.5, gt=0)
    population_size: Optional[int] = Field(default=None, ge=2)
    max_evaluations: Optional[int] = Field(default=None, ge=1)
    target_loss: Optional[float] = None
    init_range: float = Field(default=float(np.pi), gt=0)
    initial_theta: Optional[FloatTuple] = None
    log_every: int = Field(default=10, ge=1)
    stages: List[StageConfig] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_warmup(self) -> "OptimizerConfig":
        if self.warmup_iterations:
            if self.kind != OptimizerKind.LBFGS:
                raise ValueError(f"warmup_iterations applies to lbfgs only, got kind '{self.kind.value}'")
            if self.warmup_iterations >= self.max_iterations:
                raise ValueError(
                    f"warmup_iterations ({self.warmup_iterations}) must be below max_iterations ({self.max_iterations})"
                )
        return self

class LossSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    bc_strategy: BCStrategy = BCStrategy.SHIFT
    bc_weight: float = Field(default=1.0, ge=0)
    grid: IntTuple = (16,)
    cartesian: bool = True

class RunConfig(BaseModel):
    """Everything needed to reproduce one solve."""
    model_config = ConfigDict(extra="forbid")

    benchmark: Benchmark
    seed: int = 0
    output_dir: Optional[str] = None
    problem: ProblemConfig
    encoding: Dict[str, EncodingConfig]
    loss: LossSettings = Field(default_factory=LossSettings)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    evaluation: EvaluationSettings = Field(default_factory=EvaluationSettings)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.problem.kind != self.benchmark.value:
            raise ValueError(f"problem.kind '{self.problem.kind}' does not match benchmark '{self.benchmark.value}'")
        if len(self.loss.grid) != len(self.problem.variables):
            raise ValueError(
                f"loss.grid needs {len(self.problem.variables)} point count(s) for {self.problem.variables}, "
                f"got {self.loss.grid}"
            )
        return self

# Base schemas for the run registry
class RunRecordBase(BaseModel):
    run_dir: str
    benchmark: str
    seed: int
    mode: str
    optimizer: str
    status: str = RunStatus.RUNNING.value
    best_loss: Optional[float] = None
    final_loss: Optional[float] = None
    max_abs_error: Optional[float] = None
    iterations: Optional[int] = None
    evaluations: Optional[int] = None
    wall_time: Optional[float] = None
    message: Optional[str] = None

class RunRecordCreate(RunRecordBase):
    pass

class RunRecordUpdate(BaseModel):
    """Schema for updating run records - all fields optional"""
    status: Optional[str] = None
    best_loss: Optional[float] = None
    final_loss: Optional[float] = None
    max_abs_error: Optional[float] = None
    iterations: Optional[int] = None
    evaluations: Optional[int] = None
    wall_time: Optional[float] = None
    message: Optional[str] = None

class StageRecordBase(BaseModel):
    stage: int
    shots: int
    sigma_init: float
    iterations: int
    evaluations: int
    lowest_loss: float
    avg_eval_seconds: float

class StageRecordCreate(StageRecordBase):
    run_id: int

class StageRecord(StageRecordBase):
    id: int
    run_id: int

    class Config:
        from_attributes = True

class RunRecord(RunRecordBase):
    id: int
    created_at: datetime
    updated_at: datetime
    stages: List[StageRecord] = []

    class Config:
        from_attributes = True
