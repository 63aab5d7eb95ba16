"""Shared fixtures: deterministic generators and small, fast run configurations."""
import numpy as np
import pytest

from core.database.schemas import (
    Benchmark,
    LossSettings,
    OptimizerConfig,
    OptimizerKind,
    RunConfig,
    StageConfig,
)
from core.services.circuit_service import AnsatzKind
from core.services.encoding_service import EncodingConfig, EvaluationMode, EvaluationSettings
from core.services.problem_service import BurgersProblem, HypoelasticProblem
from core.services.spectral_service import ObservableForm


@pytest.fixture
def rng():
    """Deterministic RNG for reproducible tests."""
    return np.random.default_rng(42)


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Isolated output directory; the environment default is cleared."""
    monkeypatch.delenv("VQDE_OUTPUT_DIR", raising=False)
    return tmp_path / "runs"


@pytest.fixture
def small_hypoelastic_config():
    """3-qubit local-Z u and 2-qubit global sigma on six collocation points."""
    return RunConfig(
        benchmark=Benchmark.HYPOELASTIC,
        seed=3,
        problem=HypoelasticProblem(),
        encoding={
            "u": EncodingConfig(form=ObservableForm.ONE_LOCAL_Z, registers=(3,), depth=1),
            "sigma": EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(1,), depth=1),
        },
        loss=LossSettings(grid=(6,)),
        optimizer=OptimizerConfig(kind=OptimizerKind.LBFGS, max_iterations=5),
        evaluation=EvaluationSettings(mode=EvaluationMode.EXACT),
    )


@pytest.fixture
def small_burgers_config():
    """3-qubit global encoding of u(x, t), two short CMA-ES stages in stacked mode."""
    return RunConfig(
        benchmark=Benchmark.BURGERS,
        seed=5,
        problem=BurgersProblem(a=0.5, b=0.25),
        encoding={
            "u": EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(1, 1),
                                ansatz=AnsatzKind.HEA_MIXED, depth=2),
        },
        loss=LossSettings(grid=(4, 3)),
        optimizer=OptimizerConfig(
            kind=OptimizerKind.CMAES,
            stages=[
                StageConfig(shots=50, sigma_init=0.5, max_iterations=3),
                StageConfig(shots=100, sigma_init=0.25, max_iterations=3),
            ],
        ),
        evaluation=EvaluationSettings(mode=EvaluationMode.STACKED, shots=50, stack=2),
    )


@pytest.fixture
def exact_burgers_config(small_burgers_config):
    return small_burgers_config.model_copy(update={"evaluation": EvaluationSettings(mode=EvaluationMode.EXACT)})
