"""Benchmark problems: residual operators, boundary data and analytic references."""
import logging
from typing import Dict, List, Literal, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .encoding_service import BCShift, Interval, ShiftKind
from .spectral_service import ChebyshevBasis

logger = logging.getLogger(__name__)

FieldKey = Tuple[str, Tuple[int, ...]]
Fields = Dict[FieldKey, np.ndarray]

SQRT3 = np.sqrt(3.0)


class BoundaryTarget(BaseModel):
    """Penalty anchor: the named function should equal `target` at `point`."""
    model_config = ConfigDict(frozen=True)

    function: str
    point: Tuple[float, ...]
    target: float


class ProblemDefinition(Protocol):
    kind: str

    @property
    def variables(self) -> Tuple[str, ...]: ...

    @property
    def functions(self) -> Tuple[str, ...]: ...

    @property
    def field_keys(self) -> Tuple[FieldKey, ...]: ...

    def domains(self) -> Tuple[ChebyshevBasis, ...]: ...

    def residuals(self, fields: Fields) -> np.ndarray: ...

    def residual_partials(self, fields: Fields) -> List[Dict[FieldKey, np.ndarray]]: ...

    def bc_shifts(self) -> Dict[str, BCShift]: ...

    def boundary_targets(self, points: np.ndarray) -> List[BoundaryTarget]: ...

    def analytic(self, points: np.ndarray) -> Dict[str, np.ndarray]: ...

    def analytic_fields(self, points: np.ndarray) -> Fields: ...


# --- Hypoelastic tensile test ---

class HypoelasticProblem(BaseModel):
    """1-D bar with power-law hardening: u' = sigma/K + (2/sqrt3) eps0 (sigma/(sqrt3 sigma0))^n, sigma' = -b."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["hypoelastic"] = "hypoelastic"
    K: float = Field(default=100.0, gt=0)
    n: int = Field(default=4, ge=1)
    b: float = 10.0
    eps0: float = 0.5
    sigma0: float = Field(default=5.0, gt=0)
    g: float = 12.0
    domain: Interval = (0.0, 1.0)

    @property
    def variables(self) -> Tuple[str, ...]:
        return ("x",)

    @property
    def functions(self) -> Tuple[str, ...]:
        return ("u", "sigma")

    @property
    def field_keys(self) -> Tuple[FieldKey, ...]:
        return (("u", (1,)), ("sigma", (0,)), ("sigma", (1,)))

    def domains(self) -> Tuple[ChebyshevBasis, ...]:
        return (ChebyshevBasis(lo=self.domain[0], hi=self.domain[1]),)

    def residuals(self, fields: Fields) -> np.ndarray:
        d1, d2 = hypoelastic_residuals(fields[("u", (1,))], fields[("sigma", (0,))], fields[("sigma", (1,))], self)
        return np.vstack([d1, d2])

    def residual_partials(self, fields: Fields) -> List[Dict[FieldKey, np.ndarray]]:
        sigma = fields[("sigma", (0,))]
        ratio = sigma / (SQRT3 * self.sigma0)
        d_sigma = -1.0 / self.K - (2 / SQRT3) * self.eps0 * self.n * ratio ** (self.n - 1) / (SQRT3 * self.sigma0)
        ones = np.ones_like(sigma)
        return [
            {("u", (1,)): ones, ("sigma", (0,)): d_sigma},
            {("sigma", (1,)): ones},
        ]

    def bc_shifts(self) -> Dict[str, BCShift]:
        origin = (self.domain[0],)
        return {
            "u": BCShift(kind=ShiftKind.POINT, anchor=origin, target=0.0),
            "sigma": BCShift(kind=ShiftKind.POINT, anchor=origin, target=self.g),
        }

    def boundary_targets(self, points: np.ndarray) -> List[BoundaryTarget]:
        origin = (self.domain[0],)
        return [
            BoundaryTarget(function="u", point=origin, target=0.0),
            BoundaryTarget(function="sigma", point=origin, target=self.g),
        ]

    def analytic(self, points: np.ndarray) -> Dict[str, np.ndarray]:
        u, sigma = hypoelastic_analytic(np.asarray(points, dtype=float).reshape(-1), self)
        return {"u": u, "sigma": sigma}

    def analytic_fields(self, points: np.ndarray) -> Fields:
        x = np.asarray(points, dtype=float).reshape(-1)
        u_poly, sigma_poly = hypoelastic_polynomials(self)
        return {
            ("u", (0,)): u_poly(x),
            ("u", (1,)): u_poly.deriv()(x),
            ("sigma", (0,)): sigma_poly(x),
            ("sigma", (1,)): np.full_like(x, -self.b),
        }


def hypoelastic_residuals(u_prime, sigma, sigma_prime, params: HypoelasticProblem) -> Tuple[np.ndarray, np.ndarray]:
    """D1 = u' - sigma/K - (2/sqrt3) eps0 (sigma/(sqrt3 sigma0))^n and D2 = sigma' + b."""
    sigma = np.asarray(sigma, dtype=float)
    if float(params.n) != int(params.n) and np.any(sigma < 0):
        raise ValueError(f"Non-integer exponent n={params.n} is undefined for negative stress")
    power = (2 / SQRT3) * params.eps0 * (sigma / (SQRT3 * params.sigma0)) ** params.n
    d1 = np.asarray(u_prime, dtype=float) - sigma / params.K - power
    d2 = np.asarray(sigma_prime, dtype=float) + params.b
    return d1, d2


def hypoelastic_polynomials(params: HypoelasticProblem) -> Tuple[Polynomial, Polynomial]:
    """Closed-form (u, sigma) as polynomials in x, with u(0) = 0 and sigma(0) = g."""
    lo = params.domain[0]
    sigma = Polynomial([params.g + params.b * lo, -params.b])
    strain_rate = sigma / params.K + (2 / SQRT3) * params.eps0 * (sigma / (SQRT3 * params.sigma0)) ** params.n
    return strain_rate.integ(lbnd=lo), sigma


def hypoelastic_analytic(x, params: HypoelasticProblem) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    lo, hi = params.domain
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"Point(s) outside domain [{lo}, {hi}]")
    u_poly, sigma_poly = hypoelastic_polynomials(params)
    return u_poly(x), sigma_poly(x)


# --- Inviscid Burgers ---

class BurgersProblem(BaseModel):
    """u_t + u u_x = 0 with the linear initial condition u(x, 0) = a x + b."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["burgers"] = "burgers"
    a: float = 0.5
    b: float = 0.25
    domain_x: Interval = (0.0, 0.95)
    domain_t: Interval = (0.0, 0.95)

    @model_validator(mode="after")
    def check_no_shock(self) -> "BurgersProblem":
        if min(self.a * t + 1 for t in self.domain_t) <= 0:
            raise ValueError(f"a*t + 1 must stay positive on t in {self.domain_t} (a={self.a})")
        return self

    @property
    def variables(self) -> Tuple[str, ...]:
        return ("x", "t")

    @property
    def functions(self) -> Tuple[str, ...]:
        return ("u",)

    @property
    def field_keys(self) -> Tuple[FieldKey, ...]:
        return (("u", (0, 0)), ("u", (1, 0)), ("u", (0, 1)))

    def domains(self) -> Tuple[ChebyshevBasis, ...]:
        return (ChebyshevBasis(lo=self.domain_x[0], hi=self.domain_x[1]),
                ChebyshevBasis(lo=self.domain_t[0], hi=self.domain_t[1]))

    def initial_condition(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if order == 0:
            return self.a * x + self.b
        if order == 1:
            return np.full_like(x, self.a)
        return np.zeros_like(x)

    def residuals(self, fields: Fields) -> np.ndarray:
        return burgers_residual(fields[("u", (0, 0))], fields[("u", (0, 1))], fields[("u", (1, 0))])[None, :]

    def residual_partials(self, fields: Fields) -> List[Dict[FieldKey, np.ndarray]]:
        u = fields[("u", (0, 0))]
        return [{
            ("u", (0, 0)): fields[("u", (1, 0))],
            ("u", (1, 0)): u,
            ("u", (0, 1)): np.ones_like(u),
        }]

    def bc_shifts(self) -> Dict[str, BCShift]:
        return {"u": BCShift(kind=ShiftKind.SLICE, axis=1, axis_value=self.domain_t[0],
                             initial_condition=self.initial_condition)}

    def boundary_targets(self, points: np.ndarray) -> List[BoundaryTarget]:
        xs = np.unique(np.asarray(points, dtype=float).reshape(-1, 2)[:, 0])
        t0 = self.domain_t[0]
        return [BoundaryTarget(function="u", point=(float(x), t0), target=float(self.initial_condition(x)))
                for x in xs]

    def analytic(self, points: np.ndarray) -> Dict[str, np.ndarray]:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return {"u": burgers_analytic(pts[:, 0], pts[:, 1], self.a, self.b)}

    def analytic_fields(self, points: np.ndarray) -> Fields:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x, t = pts[:, 0], pts[:, 1]
        u = burgers_analytic(x, t, self.a, self.b)
        return {
            ("u", (0, 0)): u,
            ("u", (1, 0)): self.a / (self.a * t + 1),
            ("u", (0, 1)): -self.a * u / (self.a * t + 1),
        }


def burgers_residual(u, u_t, u_x) -> np.ndarray:
    """u_t + u * u_x."""
    return np.asarray(u_t, dtype=float) + np.asarray(u, dtype=float) * np.asarray(u_x, dtype=float)


def burgers_analytic(x, t, a: float, b: float) -> np.ndarray:
    """(a x + b) / (a t + 1), valid before characteristics cross."""
    x, t = np.asarray(x, dtype=float), np.asarray(t, dtype=float)
    denominator = a * t + 1
    if np.any(denominator <= 0):
        raise ValueError(f"Shock: a*t + 1 <= 0 for a={a} at t={t[denominator <= 0]}")
    return (a * x + b) / denominator


PROBLEM_TYPES = {"hypoelastic": HypoelasticProblem, "burgers": BurgersProblem}


# --- Error measures ---

def max_abs_error(predicted, exact) -> float:
    predicted, exact = np.asarray(predicted, dtype=float), np.asarray(exact, dtype=float)
    if predicted.shape != exact.shape:
        raise ValueError(f"Grid mismatch: predicted {predicted.shape} vs exact {exact.shape}")
    return float(np.max(np.abs(predicted - exact))) if predicted.size else 0.0


def cut_errors(points: np.ndarray, predicted, exact, cuts: Optional[Sequence[float]] = None,
               n_cuts: int = 5) -> pd.DataFrame:
    """
    Error curves along t at fixed x (x-cuts).

    Args:
        points: (npts, 2) grid of (x, t).
        predicted: Predicted values at the points.
        exact: Reference values at the points.
        cuts: Requested x positions; each snaps to the nearest grid x. Defaults to
            `n_cuts` evenly spaced grid columns.

    Returns:
        DataFrame with columns x_cut, t, predicted, exact, abs_error.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    predicted, exact = np.asarray(predicted, dtype=float), np.asarray(exact, dtype=float)
    if predicted.shape != (pts.shape[0],) or exact.shape != (pts.shape[0],):
        raise ValueError(f"Grid mismatch: {pts.shape[0]} points, {predicted.shape} predicted, {exact.shape} exact")
    xs = np.unique(pts[:, 0])
    if cuts is None:
        chosen = xs[np.unique(np.linspace(0, xs.size - 1, min(n_cuts, xs.size)).round().astype(int))]
    else:
        chosen = np.unique([xs[np.argmin(np.abs(xs - c))] for c in cuts])

    frame = pd.DataFrame({
        "x_cut": pts[:, 0],
        "t": pts[:, 1],
        "predicted": predicted,
        "exact": exact,
        "abs_error": np.abs(predicted - exact),
    })
    frame = frame[frame["x_cut"].isin(chosen)]
    return frame.sort_values(["x_cut", "t"], kind="stable").reset_index(drop=True)
