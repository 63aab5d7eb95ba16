"""Flat `key = value` run configuration files and benchmark presets."""
import logging
import re
from enum import Enum
from pathlib import Path
from typing import Dict, List, Tuple, Union

from pydantic import BaseModel

from core.database.schemas import (
    Benchmark,
    LossSettings,
    OptimizerConfig,
    OptimizerKind,
    RunConfig,
    StageConfig,
)
from .circuit_service import AnsatzKind
from .encoding_service import EncodingConfig, EvaluationMode, EvaluationSettings
from .problem_service import BurgersProblem, HypoelasticProblem
from .spectral_service import ObservableForm, PauliTerm

logger = logging.getLogger(__name__)

STAGE_KEY = re.compile(r"stage(\d+)")

# Twice the per-stage loss minima reported for the 500/2500/5000/10000-shot schedule
BURGERS_STAGE_THRESHOLDS = (0.1119, 0.0122, 0.00567, 0.00354)


def _split_lines(text: str) -> Dict[str, str]:
    flat: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ValueError(f"Line {lineno}: expected 'key = value', got '{raw.strip()}'")
        if key in flat:
            raise ValueError(f"Line {lineno}: duplicate key '{key}'")
        flat[key] = value
    return flat


def _nest(flat: Dict[str, str]) -> dict:
    nested: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        if any(not part for part in parts):
            raise ValueError(f"Malformed key '{key}'")
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ValueError(f"Key '{key}' conflicts with scalar key '{part}'")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ValueError(f"Key '{key}' conflicts with section '{key}.*'")
        node[parts[-1]] = value
    return nested


def config_from_flat(flat: Dict[str, str]) -> RunConfig:
    """Validate dotted keys into a RunConfig; unknown keys are errors."""
    nested = _nest(flat)
    optimizer = nested.get("optimizer")
    if isinstance(optimizer, dict):
        numbers = sorted(int(m.group(1)) for k in optimizer if (m := STAGE_KEY.fullmatch(k)))
        if numbers:
            if numbers != list(range(1, len(numbers) + 1)):
                raise ValueError(f"Optimizer stages must be numbered 1..N, got {numbers}")
            optimizer["stages"] = [optimizer.pop(f"stage{n}") for n in numbers]
    problem = nested.setdefault("problem", {})
    if isinstance(problem, dict) and "kind" not in problem and "benchmark" in nested:
        problem["kind"] = nested["benchmark"]
    return RunConfig.model_validate(nested)


def parse_config_text(text: str) -> RunConfig:
    return config_from_flat(_split_lines(text))


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    logger.info(f"Loading run configuration from {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def format_value(value) -> str:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, PauliTerm):
        return str(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(item) for item in value)
    return str(value)


def flatten(model: BaseModel, prefix: str = "") -> List[Tuple[str, str]]:
    """Dotted (key, value) pairs for every set field; stage lists become stage<N> sections."""
    pairs: List[Tuple[str, str]] = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{name}"
        if value is None:
            continue
        if isinstance(value, BaseModel) and not isinstance(value, PauliTerm):
            pairs += flatten(value, f"{key}.")
        elif isinstance(value, dict):
            for child, section in value.items():
                pairs += flatten(section, f"{key}.{child}.")
        elif isinstance(value, list):
            for number, section in enumerate(value, start=1):
                pairs += flatten(section, f"{prefix}stage{number}.")
        else:
            pairs.append((key, format_value(value)))
    return pairs


def serialize_config(config: RunConfig) -> str:
    lines = ["# run configuration"]
    lines += [f"{key} = {value}" for key, value in flatten(config)]
    return "\n".join(lines) + "\n"


def save_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_config(config), encoding="utf-8")
    logger.info(f"Wrote run configuration to {path}")
    return path


# --- Presets ---

def _hypoelastic_preset() -> RunConfig:
    return RunConfig(
        benchmark=Benchmark.HYPOELASTIC,
        seed=7,
        problem=HypoelasticProblem(),
        encoding={
            "u": EncodingConfig(form=ObservableForm.ONE_LOCAL_Z, registers=(15,),
                                ansatz=AnsatzKind.HEA_RY_CNOT, depth=2, scale=15.0),
            "sigma": EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(3,),
                                    ansatz=AnsatzKind.HEA_RY_CNOT, depth=4, scale=15.0),
        },
        # 15 Chebyshev modes for u alias between 16 points
        loss=LossSettings(grid=(64,)),
        optimizer=OptimizerConfig(kind=OptimizerKind.LBFGS, max_iterations=500, warmup_iterations=100,
                                  learning_rate=0.05),
        evaluation=EvaluationSettings(mode=EvaluationMode.EXACT),
    )


def _burgers_case1_preset() -> RunConfig:
    shots = (500, 2500, 5000, 10000)
    sigmas = (0.5, 0.25, 0.1, 0.05)
    return RunConfig(
        benchmark=Benchmark.BURGERS,
        seed=7,
        problem=BurgersProblem(a=0.5, b=0.25),
        encoding={
            "u": EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(1, 2),
                                ansatz=AnsatzKind.HEA_MIXED, depth=3, scale=2.0),
        },
        loss=LossSettings(grid=(30, 51)),
        optimizer=OptimizerConfig(
            kind=OptimizerKind.CMAES,
            stages=[StageConfig(shots=n, sigma_init=s, max_iterations=250, threshold=t)
                    for n, s, t in zip(shots, sigmas, BURGERS_STAGE_THRESHOLDS)],
        ),
        evaluation=EvaluationSettings(mode=EvaluationMode.STACKED, shots=500, stack=10),
    )


def _burgers_case2_preset() -> RunConfig:
    return RunConfig(
        benchmark=Benchmark.BURGERS,
        seed=7,
        problem=BurgersProblem(a=1.0, b=1.0),
        encoding={
            "u": EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(1, 3),
                                ansatz=AnsatzKind.HEA_RX_CZ_CASCADE, depth=4, scale=2.0),
        },
        loss=LossSettings(grid=(30, 51)),
        optimizer=OptimizerConfig(
            kind=OptimizerKind.CMAES,
            population_size=16,
            stages=[StageConfig(shots=10000, sigma_init=0.1, max_iterations=200)],
        ),
        evaluation=EvaluationSettings(mode=EvaluationMode.STACKED, shots=10000, stack=10),
    )


PRESETS = {
    "hypoelastic": _hypoelastic_preset,
    "burgers-case1": _burgers_case1_preset,
    "burgers-case2": _burgers_case2_preset,
}


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}'; choose from {sorted(PRESETS)}")
    return PRESETS[name]()
