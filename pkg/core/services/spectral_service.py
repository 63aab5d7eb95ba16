"""Chebyshev basis, domain mapping and diagonal observable tables."""
import logging
from enum import Enum
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

DOMAIN_TOLERANCE = 1e-12
PAULI_ATOMS = frozenset("IXYZ")


class ChebyshevBasis(BaseModel):
    """Physical interval of one variable, mapped affinely onto [-1, 1]."""
    model_config = ConfigDict(frozen=True)

    lo: float = 0.0
    hi: float = 1.0

    @model_validator(mode="after")
    def check_interval(self) -> "ChebyshevBasis":
        if not self.hi > self.lo:
            raise ValueError(f"Domain upper bound {self.hi} must exceed lower bound {self.lo}")
        return self

    @property
    def factor(self) -> float:
        return 2.0 / (self.hi - self.lo)


def cheb_table(n_terms: int, x: Union[float, np.ndarray], m: int = 0) -> np.ndarray:
    """
    m-th derivatives of T_0 .. T_{n_terms-1} at every x.

    Uses the three-term recurrence differentiated k times,
    D^k T_{i+1} = 2x D^k T_i + 2k D^{k-1} T_i - D^k T_{i-1},
    which stays finite at x = +-1.

    Returns:
        Array of shape (len(x), n_terms).
    """
    if m < 0:
        raise ValueError(f"Derivative order must be >= 0, got {m}")
    x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), -1.0, 1.0)
    lower = None
    for k in range(m + 1):
        table = np.zeros((x.size, max(n_terms, 2)))
        if k == 0:
            table[:, 0] = 1.0
            table[:, 1] = x
        elif k == 1:
            table[:, 1] = 1.0
        for i in range(1, n_terms - 1):
            table[:, i + 1] = 2 * x * table[:, i] - table[:, i - 1]
            if k:
                table[:, i + 1] += 2 * k * lower[:, i]
        lower = table
    return lower[:, :n_terms]


def cheb(i: int, x: float) -> float:
    """T_i(x), with x clamped to [-1, 1]."""
    if i < 0:
        raise ValueError(f"Chebyshev index must be >= 0, got {i}")
    return float(cheb_table(i + 1, x)[0, i])


def cheb_deriv(i: int, x: float, m: int = 1) -> float:
    if i < 0:
        raise ValueError(f"Chebyshev index must be >= 0, got {i}")
    return float(cheb_table(i + 1, x, m)[0, i])


def map_to_canonical(x: Union[float, np.ndarray], basis: ChebyshevBasis, m: int = 1) -> Tuple[np.ndarray, float]:
    """
    Map physical coordinates onto [-1, 1].

    Returns:
        Tuple of (canonical coordinates, chain-rule factor for the m-th derivative).
    """
    x = np.asarray(x, dtype=float)
    slack = DOMAIN_TOLERANCE * (basis.hi - basis.lo)
    if np.any(x < basis.lo - slack) or np.any(x > basis.hi + slack):
        raise ValueError(f"Point(s) outside domain [{basis.lo}, {basis.hi}]: {x[(x < basis.lo) | (x > basis.hi)]}")
    canonical = np.clip(2.0 * (x - basis.lo) / (basis.hi - basis.lo) - 1.0, -1.0, 1.0)
    return canonical, basis.factor ** m


class ObservableForm(str, Enum):
    GLOBAL_DIAGONAL = "global_diagonal"
    K_LOCAL_PAULI = "k_local_pauli"
    ONE_LOCAL_Z = "one_local_z"


class PauliTerm(BaseModel):
    """Weighted Pauli string; qubit 0 is the leftmost atom."""
    model_config = ConfigDict(frozen=True)

    coefficient: float = 1.0
    pauli: str

    @field_validator("pauli")
    @classmethod
    def check_atoms(cls, value: str) -> str:
        value = value.strip().upper()
        if not value or set(value) - PAULI_ATOMS:
            raise ValueError(f"Pauli string '{value}' must use only I, X, Y, Z")
        return value

    @classmethod
    def parse(cls, text: str) -> "PauliTerm":
        """Parse 'coefficient:PAULI', e.g. '0.5:ZIIZ'."""
        coefficient, sep, pauli = text.partition(":")
        if not sep:
            raise ValueError(f"Pauli term '{text}' must look like 'coefficient:PAULI'")
        return cls(coefficient=float(coefficient), pauli=pauli)

    def __str__(self) -> str:
        return f"{self.coefficient:.17g}:{self.pauli}"

    @property
    def weight(self) -> int:
        return sum(atom != "I" for atom in self.pauli)


class ObservableSpec(BaseModel):
    """
    Chebyshev-weighted observable family.

    `registers` holds the index-register width of every variable; the
    global form adds one leading Z qubit in front of them.
    """
    model_config = ConfigDict(frozen=True)

    form: ObservableForm
    registers: Tuple[int, ...]
    derivative_orders: Tuple[int, ...] = ()
    terms: Tuple[PauliTerm, ...] = ()
    locality: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_layout(self) -> "ObservableSpec":
        if not self.registers or any(w < 1 for w in self.registers):
            raise ValueError(f"Register widths must be positive, got {self.registers}")
        if self.form != ObservableForm.GLOBAL_DIAGONAL and len(self.registers) != 1:
            raise ValueError(f"{self.form.value} encodes a single variable, got registers {self.registers}")
        if not self.derivative_orders:
            object.__setattr__(self, "derivative_orders", (0,) * len(self.registers))
        if len(self.derivative_orders) != len(self.registers):
            raise ValueError(f"Need one derivative order per register, got {self.derivative_orders}")
        if any(m < 0 for m in self.derivative_orders):
            raise ValueError(f"Derivative orders must be >= 0, got {self.derivative_orders}")
        if self.form == ObservableForm.K_LOCAL_PAULI:
            if not self.terms:
                raise ValueError("k_local_pauli observable needs at least one Pauli term")
            for term in self.terms:
                if len(term.pauli) != self.registers[0]:
                    raise ValueError(f"Pauli string '{term.pauli}' does not span {self.registers[0]} qubits")
                if self.locality is not None and term.weight > self.locality:
                    raise ValueError(f"Pauli string '{term.pauli}' acts on more than {self.locality} qubits")
        return self

    @property
    def n_variables(self) -> int:
        return len(self.registers)

    @property
    def n_qubits(self) -> int:
        if self.form == ObservableForm.GLOBAL_DIAGONAL:
            return 1 + sum(self.registers)
        return self.registers[0]

    def with_orders(self, orders: Sequence[int]) -> "ObservableSpec":
        return type(self).model_validate({**self.model_dump(), "derivative_orders": tuple(int(m) for m in orders)})


@lru_cache(maxsize=32)
def z_signs(n_qubits: int) -> np.ndarray:
    """(2^n, n) matrix of Z eigenvalues (-1)^{b_q} per basis state and qubit."""
    index = np.arange(1 << n_qubits)[:, None]
    shifts = n_qubits - 1 - np.arange(n_qubits)[None, :]
    signs = 1.0 - 2.0 * ((index >> shifts) & 1)
    signs.setflags(write=False)
    return signs


def as_points(points: Union[float, Sequence, np.ndarray], n_variables: int) -> np.ndarray:
    """Coerce one or many points into an (npts, n_variables) array."""
    return np.asarray(points, dtype=float).reshape(-1, n_variables)


def _register_values(coords: np.ndarray, basis: ChebyshevBasis, m: int, n_terms: int) -> np.ndarray:
    canonical, scale = map_to_canonical(coords, basis, m)
    return cheb_table(n_terms, canonical, m) * scale


def diagonal_table(spec: ObservableSpec, bases: Sequence[ChebyshevBasis], points) -> np.ndarray:
    """
    Eigenvalues of the observable at every point.

    Args:
        spec: Observable family and derivative orders.
        bases: One Chebyshev basis per variable.
        points: Physical coordinates, shape (npts, n_variables) or a single point.

    Returns:
        Array of shape (npts, 2^n_qubits).
    """
    if len(bases) != spec.n_variables:
        raise ValueError(f"Observable has {spec.n_variables} variable(s), got {len(bases)} bases")
    pts = as_points(points, spec.n_variables)
    orders = spec.derivative_orders

    if spec.form == ObservableForm.GLOBAL_DIAGONAL:
        combined = np.ones((pts.shape[0], 1))
        for v, width in enumerate(spec.registers):
            values = _register_values(pts[:, v], bases[v], orders[v], 1 << width)
            combined = (combined[:, :, None] * values[:, None, :]).reshape(pts.shape[0], -1)
        return np.hstack([combined, -combined])

    width = spec.registers[0]
    if spec.form == ObservableForm.ONE_LOCAL_Z:
        values = _register_values(pts[:, 0], bases[0], orders[0], width)
        return values @ z_signs(width).T

    for term in spec.terms:
        if set(term.pauli) - {"I", "Z"}:
            raise ValueError(f"Pauli string '{term.pauli}' needs a measurement-basis rotation; only Z/I atoms are supported")
    coefficients = np.array([term.coefficient for term in spec.terms])
    values = _register_values(pts[:, 0], bases[0], orders[0], len(spec.terms)) * coefficients
    signs = z_signs(width)
    parity = np.stack([signs[:, [q for q, atom in enumerate(term.pauli) if atom == "Z"]].prod(axis=1)
                       for term in spec.terms], axis=1)
    return values @ parity.T
