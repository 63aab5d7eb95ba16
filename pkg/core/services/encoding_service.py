"""Encoded functions f = scale * <psi(theta)| O_m(x) |psi(theta)> and boundary shifts."""
import logging
from enum import Enum
from typing import TYPE_CHECKING, Annotated, Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

from .circuit_service import (
    AnsatzKind,
    ParamCircuit,
    StackSpec,
    build_ansatz,
    probabilities,
    run_circuit,
    sampled_expectations,
    stacked_expectations,
)
from .spectral_service import ChebyshevBasis, ObservableForm, ObservableSpec, PauliTerm, as_points, diagonal_table

if TYPE_CHECKING:
    from core.database.schemas import RunConfig

logger = logging.getLogger(__name__)


def split_csv(value: Any) -> Any:
    """Accept '1,2' style strings wherever a tuple is expected."""
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(",") if item.strip())
    if isinstance(value, (int, float)):
        return (value,)
    return value


def parse_terms(value: Any) -> Any:
    value = split_csv(value)
    if isinstance(value, tuple):
        return tuple(PauliTerm.parse(item) if isinstance(item, str) else item for item in value)
    return value


IntTuple = Annotated[Tuple[int, ...], BeforeValidator(split_csv)]
FloatTuple = Annotated[Tuple[float, ...], BeforeValidator(split_csv)]
TermTuple = Annotated[Tuple[PauliTerm, ...], BeforeValidator(parse_terms)]
Interval = Annotated[Tuple[float, float], BeforeValidator(split_csv)]


class EvaluationMode(str, Enum):
    EXACT = "exact"
    SHOTS = "shots"
    STACKED = "stacked"


class EvaluationSettings(BaseModel):
    """How expectations are estimated; `shots` counts shots per block execution."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: EvaluationMode = EvaluationMode.EXACT
    shots: int = Field(default=10000, ge=1)
    stack: int = Field(default=1, ge=1)

    @property
    def shots_total(self) -> int:
        return self.shots * self.stack if self.mode == EvaluationMode.STACKED else self.shots


def estimate(table: np.ndarray, probs: np.ndarray, settings: EvaluationSettings,
             rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Estimate every table row under the configured evaluation mode."""
    if settings.mode == EvaluationMode.EXACT:
        return table @ probs
    if rng is None:
        raise ValueError(f"{settings.mode.value} evaluation needs a random generator")
    if settings.mode == EvaluationMode.SHOTS:
        return sampled_expectations(table, probs, settings.shots, rng)
    return stacked_expectations(table, probs, settings.shots_total, settings.stack, rng)


class EncodedFunction(BaseModel):
    """A trainable function: ansatz circuit, observable family and output scale."""
    model_config = ConfigDict(frozen=True)

    name: str
    circuit: ParamCircuit
    observable: ObservableSpec
    scale: float = 1.0
    bases: Tuple[ChebyshevBasis, ...]
    evaluation: EvaluationSettings = EvaluationSettings()

    @field_validator("scale")
    @classmethod
    def check_scale(cls, value: float) -> float:
        if value == 0:
            raise ValueError("Function scale must be non-zero")
        return value

    @model_validator(mode="after")
    def check_layout(self) -> "EncodedFunction":
        if self.observable.n_qubits != self.circuit.n_qubits:
            raise ValueError(
                f"Observable for '{self.name}' spans {self.observable.n_qubits} qubits, "
                f"circuit has {self.circuit.n_qubits}"
            )
        if len(self.bases) != self.observable.n_variables:
            raise ValueError(f"'{self.name}' needs {self.observable.n_variables} domain(s), got {len(self.bases)}")
        return self

    @property
    def n_params(self) -> int:
        return self.circuit.n_params

    @property
    def n_variables(self) -> int:
        return self.observable.n_variables

    @property
    def stack(self) -> StackSpec:
        return StackSpec(block=self.circuit, copies=self.evaluation.stack)

    def probabilities(self, theta: Sequence[float]) -> np.ndarray:
        return probabilities(run_circuit(self.circuit, theta))

    def table(self, points, orders: Optional[Sequence[int]] = None) -> np.ndarray:
        """Unscaled eigenvalue table for the given derivative orders."""
        spec = self.observable if orders is None else self.observable.with_orders(orders)
        return diagonal_table(spec, self.bases, points)

    def estimate(self, table: np.ndarray, probs: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return self.scale * estimate(table, probs, self.evaluation, rng)

    def with_evaluation(self, evaluation: EvaluationSettings) -> "EncodedFunction":
        return self.model_copy(update={"evaluation": evaluation})


class ShiftKind(str, Enum):
    POINT = "point"
    SLICE = "slice"


InitialCondition = Callable[[np.ndarray, int], np.ndarray]


class BCShift(BaseModel):
    """
    Functional boundary shift.

    point: f(x) - f(x0) + g0, applied to the undifferentiated function.
    slice: u(x, t) - u(x, t0) + f_ic(x), applied while t is not differentiated.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: ShiftKind
    anchor: Tuple[float, ...] = ()
    target: float = 0.0
    axis: int = 1
    axis_value: float = 0.0
    initial_condition: Optional[InitialCondition] = None

    @model_validator(mode="after")
    def check_kind(self) -> "BCShift":
        if self.kind == ShiftKind.POINT and not self.anchor:
            raise ValueError("Point shift needs an anchor point")
        if self.kind == ShiftKind.SLICE and self.initial_condition is None:
            raise ValueError("Slice shift needs an initial condition")
        return self

    def affects(self, orders: Sequence[int]) -> bool:
        if self.kind == ShiftKind.POINT:
            return not any(orders)
        return orders[self.axis] == 0

    def _free_axis(self, n_variables: int) -> int:
        if n_variables != 2:
            raise ValueError(f"Slice shift needs two variables, got {n_variables}")
        return 1 - self.axis

    def anchor_points(self, points: np.ndarray) -> np.ndarray:
        if self.kind == ShiftKind.POINT:
            anchor = np.asarray(self.anchor, dtype=float)
            if anchor.size != points.shape[1]:
                raise ValueError(f"Anchor {self.anchor} does not match {points.shape[1]}-variable points")
            return np.broadcast_to(anchor, points.shape).copy()
        self._free_axis(points.shape[1])
        anchors = points.copy()
        anchors[:, self.axis] = self.axis_value
        return anchors

    def target_values(self, points: np.ndarray, orders: Sequence[int]) -> np.ndarray:
        if self.kind == ShiftKind.POINT:
            return np.full(points.shape[0], self.target)
        free = self._free_axis(points.shape[1])
        values = self.initial_condition(points[:, free], orders[free])
        return np.broadcast_to(np.asarray(values, dtype=float), (points.shape[0],)).copy()


class ShiftedField:
    """
    One function at fixed derivative orders on a fixed point set.

    Tables are built once; `values` evaluates every point from a single
    output distribution. Points lying on their own anchor reuse the anchor
    estimate, so shifted boundary values hold exactly in every mode.
    """

    def __init__(self, function: EncodedFunction, orders: Sequence[int], points, shift: Optional[BCShift] = None):
        self.function = function
        self.orders = tuple(int(m) for m in orders)
        self.points = as_points(points, function.n_variables)
        self.table = function.table(self.points, self.orders)
        self.shift = shift if shift is not None and shift.affects(self.orders) else None
        if self.shift is not None:
            anchors = self.shift.anchor_points(self.points)
            unique, inverse = np.unique(anchors, axis=0, return_inverse=True)
            self._anchor_table = function.table(unique, self.orders)
            self._inverse = np.asarray(inverse).reshape(-1)
            self._on_anchor = np.all(self.points == anchors, axis=1)
            self._targets = self.shift.target_values(self.points, self.orders)

    def __len__(self) -> int:
        return self.points.shape[0]

    def values(self, probs: np.ndarray, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        main = self.function.estimate(self.table, probs, rng)
        if self.shift is None:
            return main
        anchor = self.function.estimate(self._anchor_table, probs, rng)[self._inverse]
        main = np.where(self._on_anchor, anchor, main)
        return main - anchor + self._targets


def evaluate_grid(function: EncodedFunction, theta: Sequence[float], points,
                  orders: Optional[Sequence[int]] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """f^(m) at every point; shots/stacked modes need `rng`."""
    orders = orders if orders is not None else (0,) * function.n_variables
    return ShiftedField(function, orders, points).values(function.probabilities(theta), rng)


def evaluate(function: EncodedFunction, theta: Sequence[float], point,
             orders: Optional[Sequence[int]] = None, rng: Optional[np.random.Generator] = None) -> float:
    return float(evaluate_grid(function, theta, point, orders, rng)[0])


def evaluate_shifted_grid(function: EncodedFunction, shift: Optional[BCShift], theta: Sequence[float], points,
                          orders: Optional[Sequence[int]] = None,
                          rng: Optional[np.random.Generator] = None) -> np.ndarray:
    orders = orders if orders is not None else (0,) * function.n_variables
    return ShiftedField(function, orders, points, shift).values(function.probabilities(theta), rng)


def evaluate_shifted(function: EncodedFunction, shift: Optional[BCShift], theta: Sequence[float], point,
                     orders: Optional[Sequence[int]] = None, rng: Optional[np.random.Generator] = None) -> float:
    return float(evaluate_shifted_grid(function, shift, theta, point, orders, rng)[0])


class EncodingConfig(BaseModel):
    """Per-function encoding choices as they appear under `encoding.<name>.*`."""
    model_config = ConfigDict(extra="forbid")

    form: ObservableForm
    registers: IntTuple
    ansatz: AnsatzKind = AnsatzKind.HEA_RY_CNOT
    depth: int = Field(default=1, ge=1)
    scale: float = 1.0
    terms: TermTuple = ()
    locality: Optional[int] = Field(default=None, ge=1)

    def observable(self) -> ObservableSpec:
        return ObservableSpec(form=self.form, registers=self.registers, terms=self.terms, locality=self.locality)


def build_encoding(name: str, encoding: EncodingConfig, bases: Sequence[ChebyshevBasis],
                   evaluation: EvaluationSettings) -> EncodedFunction:
    observable = encoding.observable()
    circuit = build_ansatz(encoding.ansatz, observable.n_qubits, encoding.depth)
    return EncodedFunction(
        name=name,
        circuit=circuit,
        observable=observable,
        scale=encoding.scale,
        bases=tuple(bases),
        evaluation=evaluation,
    )


def build_benchmark_encodings(config: "RunConfig") -> List[EncodedFunction]:
    """Encoded functions of a run, ordered as the problem lists its unknowns."""
    problem = config.problem
    if problem.kind != config.benchmark.value:
        raise ValueError(f"Unknown benchmark '{config.benchmark.value}' for problem kind '{problem.kind}'")
    missing = [name for name in problem.functions if name not in config.encoding]
    if missing:
        raise ValueError(f"No encoding configured for function(s) {missing}")
    extra = sorted(set(config.encoding) - set(problem.functions))
    if extra:
        raise ValueError(f"Encodings {extra} do not match any unknown of '{problem.kind}'")

    functions = [
        build_encoding(name, config.encoding[name], problem.domains(), config.evaluation)
        for name in problem.functions
    ]
    for function in functions:
        logger.info(
            f"Encoded '{function.name}': {function.observable.form.value} on {function.circuit.n_qubits} qubits, "
            f"{function.n_params} parameters, stack {function.evaluation.stack}"
        )
    return functions
