"""Physics-informed loss over collocation grids and its parameter-shift gradient."""
import logging
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .circuit_service import derive_rng, parameter_shift_jacobian
from .encoding_service import EncodedFunction, EvaluationMode, EvaluationSettings, ShiftedField
from .problem_service import BoundaryTarget, FieldKey, ProblemDefinition
from .spectral_service import ChebyshevBasis

logger = logging.getLogger(__name__)


class BCStrategy(str, Enum):
    SHIFT = "shift"
    PENALTY = "penalty"
    BOTH = "both"


class CollocationGrid(BaseModel):
    """Sorted sample points per variable; cartesian grids take the product, first variable outermost."""
    model_config = ConfigDict(frozen=True)

    axes: Tuple[Tuple[float, ...], ...]
    cartesian: bool = True

    @model_validator(mode="after")
    def check_axes(self) -> "CollocationGrid":
        if not self.axes:
            raise ValueError("Collocation grid needs at least one variable")
        for v, axis in enumerate(self.axes):
            if len(axis) < 2:
                raise ValueError(f"Variable {v} needs at least 2 collocation points, got {len(axis)}")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"Collocation points of variable {v} must be strictly increasing")
        if not self.cartesian and len({len(axis) for axis in self.axes}) != 1:
            raise ValueError("Non-cartesian grids need the same number of points per variable")
        return self

    @classmethod
    def uniform(cls, domains: Sequence[ChebyshevBasis], counts: Sequence[int], cartesian: bool = True) -> "CollocationGrid":
        if len(domains) != len(counts):
            raise ValueError(f"Got {len(counts)} point counts for {len(domains)} variables")
        axes = tuple(tuple(np.linspace(d.lo, d.hi, int(n)).tolist()) for d, n in zip(domains, counts))
        return cls(axes=axes, cartesian=cartesian)

    @property
    def n_variables(self) -> int:
        return len(self.axes)

    def points(self) -> np.ndarray:
        if not self.cartesian:
            return np.column_stack([np.asarray(axis) for axis in self.axes])
        mesh = np.meshgrid(*[np.asarray(axis) for axis in self.axes], indexing="ij")
        return np.column_stack([m.reshape(-1) for m in mesh])


class LossConfig(BaseModel):
    """BC handling, penalty weight and grid; `evaluation` overrides the functions' own settings when set."""
    model_config = ConfigDict(frozen=True)

    bc_strategy: BCStrategy = BCStrategy.SHIFT
    bc_weight: float = Field(default=1.0, ge=0)
    grid: CollocationGrid
    evaluation: Optional[EvaluationSettings] = None

    @property
    def uses_shift(self) -> bool:
        return self.bc_strategy in (BCStrategy.SHIFT, BCStrategy.BOTH)

    @property
    def uses_penalty(self) -> bool:
        return self.bc_strategy in (BCStrategy.PENALTY, BCStrategy.BOTH)

    @property
    def penalty_weight(self) -> float:
        return self.bc_weight if self.uses_penalty else 0.0


class LossBreakdown(BaseModel):
    pde: float
    bc: float
    total: float


# --- Pure reductions ---

def pde_loss_from_residuals(residuals: np.ndarray) -> float:
    """Mean over points of the summed squared residual components."""
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    if r.shape[1] == 0:
        raise ValueError("Cannot evaluate the PDE loss on an empty grid")
    return float(np.sum(r ** 2) / r.shape[1])


def bc_loss_from_values(values, targets) -> float:
    values, targets = np.asarray(values, dtype=float), np.asarray(targets, dtype=float)
    if values.shape != targets.shape:
        raise ValueError(f"Got {values.size} boundary values for {targets.size} targets")
    return float(np.sum((values - targets) ** 2))


def total_loss(config: LossConfig, pde: float, bc: float) -> float:
    """L = L_pde + weight * L_bc; the BC term vanishes under the pure shift strategy."""
    return pde + config.penalty_weight * bc


# --- Evaluation from encoded functions ---

def split_parameters(functions: Sequence[EncodedFunction], theta) -> Dict[str, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    total = sum(f.n_params for f in functions)
    if theta.shape != (total,):
        raise ValueError(f"Expected {total} parameters, got shape {theta.shape}")
    parts, start = {}, 0
    for function in functions:
        parts[function.name] = theta[start:start + function.n_params]
        start += function.n_params
    return parts


def _by_name(functions: Sequence[EncodedFunction]) -> Dict[str, EncodedFunction]:
    return {function.name: function for function in functions}


def residuals(problem: ProblemDefinition, functions: Sequence[EncodedFunction], theta, points,
              rng: Optional[np.random.Generator] = None, shift: bool = True) -> np.ndarray:
    """Residual components, shape (components, npts), from (shifted) field values."""
    named = _by_name(functions)
    parts = split_parameters(functions, theta)
    shifts = problem.bc_shifts() if shift else {}
    probs = {name: named[name].probabilities(parts[name]) for name in named}
    fields = {
        key: ShiftedField(named[key[0]], key[1], points, shifts.get(key[0])).values(probs[key[0]], rng)
        for key in problem.field_keys
    }
    return problem.residuals(fields)


def loss_pde(problem: ProblemDefinition, functions: Sequence[EncodedFunction], theta, grid: CollocationGrid,
             rng: Optional[np.random.Generator] = None, shift: bool = True) -> float:
    return pde_loss_from_residuals(residuals(problem, functions, theta, grid.points(), rng, shift))


def loss_bc(functions: Sequence[EncodedFunction], theta, targets: Sequence[BoundaryTarget],
            rng: Optional[np.random.Generator] = None, shifts: Optional[dict] = None) -> float:
    """Sum of squared deviations of the (optionally shifted) functions at their anchors."""
    named = _by_name(functions)
    parts = split_parameters(functions, theta)
    shifts = shifts or {}
    values, wanted = [], []
    for name, group in _group_targets(targets).items():
        if name not in named:
            raise ValueError(f"Boundary target refers to unknown function '{name}'")
        function = named[name]
        field = ShiftedField(function, (0,) * function.n_variables, group[0], shifts.get(name))
        values.append(field.values(function.probabilities(parts[name]), rng))
        wanted.append(group[1])
    if not values:
        return 0.0
    return bc_loss_from_values(np.concatenate(values), np.concatenate(wanted))


def _group_targets(targets: Sequence[BoundaryTarget]) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    grouped: Dict[str, Tuple[List, List]] = {}
    for target in targets:
        points, values = grouped.setdefault(target.function, ([], []))
        points.append(target.point)
        values.append(target.target)
    return {name: (np.asarray(p, dtype=float), np.asarray(v, dtype=float)) for name, (p, v) in grouped.items()}


class EvaluationCounter:
    """Shared count of loss evaluations; keys the random substreams."""

    def __init__(self):
        self.value = 0

    def next(self) -> int:
        current = self.value
        self.value += 1
        return current


class PhysicsLoss:
    """
    Training loss of one problem, bound to its encoded functions and grid.

    Every call draws from substreams derived from (seed, evaluation, shift
    offset, term): offset 0 is the unshifted circuit, 2j+1 and 2j+2 the
    +-pi/2 shifts of parameter j; terms enumerate the residual fields and then
    the penalty anchors.
    """

    def __init__(self, problem: ProblemDefinition, functions: Sequence[EncodedFunction], config: LossConfig,
                 seed: int = 0, counter: Optional[EvaluationCounter] = None):
        if config.evaluation is not None:
            functions = [function.with_evaluation(config.evaluation) for function in functions]
        named = _by_name(functions)
        if set(named) != set(problem.functions):
            raise ValueError(f"Problem '{problem.kind}' needs functions {problem.functions}, got {sorted(named)}")

        self.problem = problem
        self.config = config
        self.seed = seed
        self.functions = [named[name] for name in problem.functions]
        self.counter = counter if counter is not None else EvaluationCounter()
        self.slices: Dict[str, slice] = {}
        start = 0
        for function in self.functions:
            self.slices[function.name] = slice(start, start + function.n_params)
            start += function.n_params

        self.points = config.grid.points()
        shifts = problem.bc_shifts() if config.uses_shift else {}
        self.field_keys: Tuple[FieldKey, ...] = tuple(problem.field_keys)
        self.fields = {
            key: ShiftedField(named[key[0]], key[1], self.points, shifts.get(key[0]))
            for key in self.field_keys
        }
        self.penalties: Dict[str, Tuple[ShiftedField, np.ndarray]] = {}
        if config.uses_penalty:
            for name, (points, targets) in _group_targets(problem.boundary_targets(self.points)).items():
                field = ShiftedField(named[name], (0,) * named[name].n_variables, points, shifts.get(name))
                self.penalties[name] = (field, targets)
        self._terms = {key: t for t, key in enumerate(self.field_keys)}
        for i, name in enumerate(self.penalties):
            self._terms[name] = len(self.field_keys) + i
        self._sampled = any(f.evaluation.mode != EvaluationMode.EXACT for f in self.functions)

    @property
    def n_params(self) -> int:
        return sum(f.n_params for f in self.functions)

    @property
    def evaluations(self) -> int:
        return self.counter.value

    def split(self, theta) -> Dict[str, np.ndarray]:
        return split_parameters(self.functions, theta)

    def with_shots(self, shots: int) -> "PhysicsLoss":
        """Same loss at a different shot count, continuing this loss's evaluation count."""
        functions = [f.with_evaluation(f.evaluation.model_copy(update={"shots": int(shots)})) for f in self.functions]
        config = self.config.model_copy(update={"evaluation": None})
        return PhysicsLoss(self.problem, functions, config, self.seed, self.counter)

    def _rng(self, evaluation: int, offset: int, term: int) -> Optional[np.random.Generator]:
        return derive_rng(self.seed, evaluation, offset, term) if self._sampled else None

    def _probabilities(self, parts: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {f.name: f.probabilities(parts[f.name]) for f in self.functions}

    def _field_values(self, probs, evaluation: int, offset: int = 0) -> Dict[FieldKey, np.ndarray]:
        return {
            key: field.values(probs[key[0]], self._rng(evaluation, offset, self._terms[key]))
            for key, field in self.fields.items()
        }

    def _penalty_deviations(self, probs, evaluation: int, offset: int = 0) -> Dict[str, np.ndarray]:
        return {
            name: field.values(probs[name], self._rng(evaluation, offset, self._terms[name])) - targets
            for name, (field, targets) in self.penalties.items()
        }

    def evaluate(self, theta) -> LossBreakdown:
        parts = self.split(theta)
        evaluation = self.counter.next()
        probs = self._probabilities(parts)
        pde = pde_loss_from_residuals(self.problem.residuals(self._field_values(probs, evaluation)))
        deviations = self._penalty_deviations(probs, evaluation)
        bc = float(sum(np.sum(d ** 2) for d in deviations.values()))
        total = total_loss(self.config, pde, bc)
        if not np.isfinite(total):
            raise FloatingPointError(f"Non-finite loss {total} (pde={pde}, bc={bc}) at evaluation {evaluation}")
        return LossBreakdown(pde=pde, bc=bc, total=total)

    def __call__(self, theta) -> float:
        return self.evaluate(theta).total

    def gradient(self, theta) -> np.ndarray:
        """Parameter-shift gradient of the total loss, normalized like the loss itself."""
        parts = self.split(theta)
        evaluation = self.counter.next()
        probs = self._probabilities(parts)
        fields = self._field_values(probs, evaluation)
        res = self.problem.residuals(fields)
        n_points = res.shape[1]

        weights = {key: np.zeros(n_points) for key in self.field_keys}
        for component, partials in enumerate(self.problem.residual_partials(fields)):
            for key, derivative in partials.items():
                weights[key] = weights[key] + (2.0 / n_points) * res[component] * derivative
        deviations = self._penalty_deviations(probs, evaluation)

        grad = np.zeros(self.n_params)
        for function in self.functions:
            name, block = function.name, self.slices[function.name]
            keys = [key for key in self.field_keys if key[0] == name]

            def observe(p: np.ndarray, shift_index: int, keys=keys, name=name, block=block) -> np.ndarray:
                offset = 2 * block.start + shift_index
                values = [self.fields[key].values(p, self._rng(evaluation, offset, self._terms[key])) for key in keys]
                if name in self.penalties:
                    values.append(self.penalties[name][0].values(p, self._rng(evaluation, offset, self._terms[name])))
                return np.concatenate(values)

            chain = [weights[key] for key in keys]
            if name in self.penalties:
                chain.append(2.0 * self.config.penalty_weight * deviations[name])
            jacobian = parameter_shift_jacobian(function.circuit, parts[name], observe)
            grad[block] = jacobian @ np.concatenate(chain)

        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"Non-finite gradient at evaluation {evaluation}")
        return grad


def parameter_shift_gradient(loss: PhysicsLoss, theta) -> np.ndarray:
    return loss.gradient(theta)
