"""Dense statevector simulation of the layered ansatz circuits.

Qubit 0 is the most significant bit of a basis-state index, for every
register and every observable table in the project.
"""
import logging
from collections import Counter
from enum import Enum
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

MAX_QUBITS = 20
SHIFT = np.pi / 2


class GateKind(str, Enum):
    RY = "RY"
    RX = "RX"
    CNOT = "CNOT"
    CZ = "CZ"


ROTATIONS = (GateKind.RY, GateKind.RX)


class AnsatzKind(str, Enum):
    HEA_RY_CNOT = "hea_ry_cnot"
    HEA_MIXED = "hea_mixed"
    HEA_RX_CZ_CASCADE = "hea_rx_cz_cascade"


class Gate(BaseModel):
    """One gate of a circuit; rotations reference an entry of theta."""
    model_config = ConfigDict(frozen=True)

    kind: GateKind
    target: int = Field(ge=0)
    control: Optional[int] = Field(default=None, ge=0)
    param: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def check_operands(self) -> "Gate":
        if self.kind in ROTATIONS:
            if self.param is None:
                raise ValueError(f"{self.kind.value} gate on qubit {self.target} needs a parameter reference")
            if self.control is not None:
                raise ValueError(f"{self.kind.value} gate takes no control qubit")
        else:
            if self.control is None:
                raise ValueError(f"{self.kind.value} gate needs a control qubit")
            if self.control == self.target:
                raise ValueError(f"{self.kind.value} control and target must differ, got {self.target}")
            if self.param is not None:
                raise ValueError(f"{self.kind.value} gate takes no parameter")
        return self

    @property
    def qubits(self) -> List[int]:
        return [self.target] if self.control is None else [self.control, self.target]


class ParamCircuit(BaseModel):
    """Ordered gate list acting on |0...0>; gates apply in list order."""
    model_config = ConfigDict(frozen=True)

    n_qubits: int = Field(ge=1)
    gates: List[Gate] = Field(default_factory=list)
    n_params: int = Field(default=0, ge=0)
    depth: int = Field(default=0, ge=0)

    @field_validator("n_qubits")
    @classmethod
    def check_width(cls, value: int) -> int:
        if value > MAX_QUBITS:
            raise ValueError(f"Registers of at most {MAX_QUBITS} qubits are supported, got {value}")
        return value

    @model_validator(mode="after")
    def check_references(self) -> "ParamCircuit":
        for gate in self.gates:
            for qubit in gate.qubits:
                if qubit >= self.n_qubits:
                    raise ValueError(f"Qubit index {qubit} out of range for a {self.n_qubits}-qubit circuit")
        referenced = {gate.param for gate in self.gates if gate.param is not None}
        out_of_range = sorted(p for p in referenced if p >= self.n_params)
        if out_of_range:
            raise ValueError(f"Parameter references {out_of_range} exceed n_params={self.n_params}")
        missing = sorted(set(range(self.n_params)) - referenced)
        if missing:
            raise ValueError(f"Parameters {missing} are never referenced by a gate")
        return self


class StackSpec(BaseModel):
    """k identical copies of a block circuit sharing one parameter vector."""
    model_config = ConfigDict(frozen=True)

    block: ParamCircuit
    copies: int = Field(default=1, ge=1)
    aggregation: Literal["mean"] = "mean"

    @property
    def total_qubits(self) -> int:
        return self.copies * self.block.n_qubits


# --- Ansatz builders ---

def _brick(n: int, kind: GateKind) -> List[Gate]:
    """Nearest-neighbour entanglers on pairs (0,1),(2,3),... then (1,2),(3,4),..."""
    gates = [Gate(kind=kind, control=q, target=q + 1) for q in range(0, n - 1, 2)]
    gates += [Gate(kind=kind, control=q, target=q + 1) for q in range(1, n - 1, 2)]
    return gates


def _rotation_layer(n: int, kind: GateKind, first_param: int) -> List[Gate]:
    return [Gate(kind=kind, target=q, param=first_param + q) for q in range(n)]


def hea_ry_cnot(n_qubits: int, depth: int) -> ParamCircuit:
    """Layers of RY rotations on every qubit followed by a CNOT brick."""
    gates: List[Gate] = []
    for layer in range(depth):
        gates += _rotation_layer(n_qubits, GateKind.RY, layer * n_qubits)
        gates += _brick(n_qubits, GateKind.CNOT)
    return ParamCircuit(n_qubits=n_qubits, gates=gates, n_params=n_qubits * depth, depth=depth)


def hea_mixed(n_qubits: int, depth: int) -> ParamCircuit:
    """Rotation layers alternating RY/RX; the first entangler is a CNOT brick, the rest CZ bricks."""
    gates: List[Gate] = []
    for layer in range(depth):
        rotation = GateKind.RY if layer % 2 == 0 else GateKind.RX
        gates += _rotation_layer(n_qubits, rotation, layer * n_qubits)
        gates += _brick(n_qubits, GateKind.CNOT if layer == 0 else GateKind.CZ)
    return ParamCircuit(n_qubits=n_qubits, gates=gates, n_params=n_qubits * depth, depth=depth)


def hea_rx_cz_cascade(n_qubits: int, depth: int) -> ParamCircuit:
    """Layers of RX rotations followed by the CZ cascade (0,1), (1,2), ..."""
    gates: List[Gate] = []
    for layer in range(depth):
        gates += _rotation_layer(n_qubits, GateKind.RX, layer * n_qubits)
        gates += [Gate(kind=GateKind.CZ, control=q, target=q + 1) for q in range(n_qubits - 1)]
    return ParamCircuit(n_qubits=n_qubits, gates=gates, n_params=n_qubits * depth, depth=depth)


ANSATZ_BUILDERS = {
    AnsatzKind.HEA_RY_CNOT: hea_ry_cnot,
    AnsatzKind.HEA_MIXED: hea_mixed,
    AnsatzKind.HEA_RX_CZ_CASCADE: hea_rx_cz_cascade,
}


def build_ansatz(kind: AnsatzKind, n_qubits: int, depth: int) -> ParamCircuit:
    return ANSATZ_BUILDERS[AnsatzKind(kind)](n_qubits, depth)


# --- Simulation ---

def _rotation_matrix(kind: GateKind, theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if kind == GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def _n_qubits(state: np.ndarray) -> int:
    n = int(state.size).bit_length() - 1
    if state.ndim != 1 or state.size != 1 << n:
        raise ValueError(f"Statevector length {state.size} is not a power of two")
    return n


def apply_gate(state: np.ndarray, gate: Gate, theta: Optional[float] = None) -> np.ndarray:
    """
    Apply one gate and return the new statevector; the input is left untouched.

    Args:
        state: Complex amplitudes of length 2^n.
        gate: Gate to apply.
        theta: Rotation angle, required exactly when the gate is a rotation.
    """
    n = _n_qubits(state)
    for qubit in gate.qubits:
        if qubit >= n:
            raise ValueError(f"Qubit index {qubit} out of range for a {n}-qubit state")

    if gate.kind in ROTATIONS:
        if theta is None:
            raise ValueError(f"{gate.kind.value} gate on qubit {gate.target} needs an angle")
        matrix = _rotation_matrix(gate.kind, float(theta))
        view = state.reshape(1 << gate.target, 2, -1)
        out = np.empty_like(view, dtype=complex)
        out[:, 0, :] = matrix[0, 0] * view[:, 0, :] + matrix[0, 1] * view[:, 1, :]
        out[:, 1, :] = matrix[1, 0] * view[:, 0, :] + matrix[1, 1] * view[:, 1, :]
        return out.reshape(-1)

    if theta is not None:
        raise ValueError(f"{gate.kind.value} gate takes no angle")
    tensor = state.astype(complex).reshape([2] * n)
    out = tensor.copy()

    def index(control_bit: int, target_bit: int):
        idx = [slice(None)] * n
        idx[gate.control], idx[gate.target] = control_bit, target_bit
        return tuple(idx)

    if gate.kind == GateKind.CNOT:
        out[index(1, 0)], out[index(1, 1)] = tensor[index(1, 1)], tensor[index(1, 0)]
    else:
        out[index(1, 1)] *= -1
    return out.reshape(-1)


def zero_state(n_qubits: int) -> np.ndarray:
    state = np.zeros(1 << n_qubits, dtype=complex)
    state[0] = 1.0
    return state


def run_circuit(circuit: ParamCircuit, theta: Sequence[float]) -> np.ndarray:
    """Evolve |0...0> through the circuit at the given parameter vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (circuit.n_params,):
        raise ValueError(f"Expected {circuit.n_params} parameters, got shape {theta.shape}")
    state = zero_state(circuit.n_qubits)
    for gate in circuit.gates:
        state = apply_gate(state, gate, None if gate.param is None else theta[gate.param])
    return state


def probabilities(state: np.ndarray) -> np.ndarray:
    """Born-rule distribution over computational basis states."""
    return np.abs(state) ** 2


def _distribution(probs: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    return p / p.sum()


def _check_diagonal(diag: np.ndarray, size: int) -> np.ndarray:
    diag = np.asarray(diag, dtype=float)
    if diag.shape[-1] != size:
        raise ValueError(f"Observable has {diag.shape[-1]} eigenvalues, state has {size} amplitudes")
    return diag


def expectation_exact(state: np.ndarray, diag: np.ndarray) -> float:
    """Expectation of a computational-basis diagonal observable."""
    diag = _check_diagonal(diag, state.size)
    return float(probabilities(state) @ diag)


def expectation_sampled(state: np.ndarray, diag: np.ndarray, shots: int, rng: np.random.Generator) -> float:
    """Finite-shot estimate: mean eigenvalue over `shots` measured bitstrings."""
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    diag = _check_diagonal(diag, state.size)
    counts = rng.multinomial(shots, _distribution(probabilities(state)))
    return float(np.dot(counts, diag) / shots)


def sampled_expectations(table: np.ndarray, probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """
    Finite-shot estimates for every row of an eigenvalue table.

    Each row is measured with its own independent batch of `shots` bitstrings.

    Args:
        table: (rows, 2^n) eigenvalues, one observable per row.
        probs: Basis-state distribution of the measured circuit.
        shots: Shots per row.
        rng: Source of the draws.

    Returns:
        Array of shape (rows,).
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    table = _check_diagonal(table, len(probs))
    counts = rng.multinomial(shots, _distribution(probs), size=table.shape[0])
    return np.einsum("ij,ij->i", counts, table) / shots


def split_shots(shots_total: int, copies: int) -> List[int]:
    """Split a shot budget over blocks; the remainder goes to the earliest blocks."""
    if copies < 1:
        raise ValueError(f"Stack needs at least one copy, got {copies}")
    if shots_total < copies:
        raise ValueError(f"{shots_total} shots cannot cover {copies} stacked blocks")
    base, remainder = divmod(shots_total, copies)
    return [base + 1 if block < remainder else base for block in range(copies)]


def stacked_expectations(table: np.ndarray, probs: np.ndarray, shots_total: int, copies: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Mean over `copies` independent block measurements of every table row."""
    blocks = split_shots(shots_total, copies)
    total = np.zeros(np.shape(table)[0])
    for shots in blocks:
        total += sampled_expectations(table, probs, shots, rng)
    return total / copies


def stacked_estimate(stack: StackSpec, theta: Sequence[float], diag: np.ndarray,
                     shots_total: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                     exact: bool = False) -> float:
    """
    Aggregate estimate of a stack of identical blocks.

    The stack is never simulated as one wide register: each copy is an
    independent shot batch of the block state.
    """
    state = run_circuit(stack.block, theta)
    if exact:
        return expectation_exact(state, diag)
    if shots_total is None or rng is None:
        raise ValueError("Sampled stacked estimates need shots_total and rng")
    blocks = split_shots(shots_total, stack.copies)
    return float(sum(expectation_sampled(state, diag, shots, rng) for shots in blocks) / stack.copies)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one (seed, keys...) substream."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys)))


def parameter_shift_jacobian(circuit: ParamCircuit, theta: Sequence[float],
                             observe: Callable[[np.ndarray, int], np.ndarray]) -> np.ndarray:
    """
    Exact Jacobian of any affine function of the output distribution.

    `observe(probs, shift_index)` is called at theta_j + pi/2 with
    shift_index 2j+1 and at theta_j - pi/2 with 2j+2, so callers can key
    independent random streams on it.

    Returns:
        Array of shape (n_params, *observe_shape).
    """
    counts = Counter(gate.param for gate in circuit.gates if gate.param is not None)
    shared = sorted(p for p, c in counts.items() if c != 1)
    if shared:
        raise ValueError(f"Parameters {shared} drive several gates and are not shiftable by the two-term rule")

    theta = np.asarray(theta, dtype=float)
    rows = []
    for j in range(circuit.n_params):
        shifted = theta.copy()
        shifted[j] = theta[j] + SHIFT
        plus = np.asarray(observe(probabilities(run_circuit(circuit, shifted)), 2 * j + 1))
        shifted[j] = theta[j] - SHIFT
        minus = np.asarray(observe(probabilities(run_circuit(circuit, shifted)), 2 * j + 2))
        rows.append((plus - minus) / 2)
    return np.stack(rows) if rows else np.zeros((0,))
