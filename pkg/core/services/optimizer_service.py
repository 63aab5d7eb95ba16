"""CMA-ES, gradient optimizers and N-stage shot scheduling."""
import logging
import time
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]

HISTORY_COLUMNS = ["iteration", "stage", "shots", "evaluations", "loss", "best_loss"]


def default_population_size(n_params: int) -> int:
    return 4 + int(np.floor(3 * np.log(max(n_params, 1))))


class CmaesConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    population_size: Optional[int] = Field(default=None, ge=2)
    sigma_init: float = Field(default=0.5, gt=0)
    initial_mean: Optional[Tuple[float, ...]] = None
    max_evaluations: Optional[int] = Field(default=None, ge=1)
    max_iterations: Optional[int] = Field(default=None, ge=1)
    target_loss: Optional[float] = None
    tol_x: float = Field(default=1e-12, gt=0)
    log_every: int = Field(default=10, ge=1)


class GradientMethod(str, Enum):
    ADAM = "adam"
    LBFGS = "lbfgs"


class GradientConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.1, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    max_iterations: int = Field(default=200, ge=1)
    gtol: float = Field(default=1e-8, ge=0)
    ftol: float = Field(default=1e-15, ge=0)
    target_loss: Optional[float] = None
    log_every: int = Field(default=10, ge=1)


class Stage(BaseModel):
    model_config = ConfigDict(frozen=True)

    shots: int = Field(ge=1)
    sigma_init: float = Field(gt=0)
    max_iterations: int = Field(default=100, ge=1)
    threshold: Optional[float] = None


class ShotSchedule(BaseModel):
    """Stages run in order; shots never decrease and the search radius never grows."""
    model_config = ConfigDict(frozen=True)

    stages: Tuple[Stage, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def check_monotone(self) -> "ShotSchedule":
        for previous, current in zip(self.stages, self.stages[1:]):
            if current.shots < previous.shots:
                raise ValueError(f"Stage shots must be non-decreasing, got {previous.shots} then {current.shots}")
            if current.sigma_init > previous.sigma_init:
                raise ValueError(
                    f"Stage sigma_init must be non-increasing, got {previous.sigma_init} then {current.sigma_init}"
                )
        return self


class IterationRecord(BaseModel):
    iteration: int
    stage: int
    shots: int
    evaluations: int
    loss: float
    best_loss: float


class StageSummary(BaseModel):
    stage: int
    shots: int
    sigma_init: float
    iterations: int
    evaluations: int
    lowest_loss: float
    avg_eval_seconds: float
    best_theta: Tuple[float, ...]


class RunState:
    """Iterate history plus best-ever and current-stage-best parameters."""

    def __init__(self, seed: Optional[int] = None):
        self.seed = seed
        self.theta: Optional[np.ndarray] = None
        self.best_theta: Optional[np.ndarray] = None
        self.best_loss = np.inf
        self.stage_best_theta: Optional[np.ndarray] = None
        self.stage_best_loss = np.inf
        self.evaluations = 0
        self.history: List[IterationRecord] = []
        self.stages: List[StageSummary] = []

    @property
    def iterations(self) -> int:
        return len(self.history)

    def begin_stage(self) -> None:
        self.stage_best_theta, self.stage_best_loss = None, np.inf

    def offer(self, theta: np.ndarray, loss: float) -> None:
        if loss < self.stage_best_loss:
            self.stage_best_theta, self.stage_best_loss = np.array(theta, dtype=float), float(loss)
        if loss < self.best_loss:
            self.best_theta, self.best_loss = np.array(theta, dtype=float), float(loss)

    def record(self, stage: int, shots: int, loss: float) -> IterationRecord:
        """Append one iteration; best_loss is the running minimum of recorded losses."""
        running = min(self.history[-1].best_loss, loss) if self.history else loss
        entry = IterationRecord(
            iteration=len(self.history) + 1,
            stage=stage,
            shots=shots,
            evaluations=self.evaluations,
            loss=float(loss),
            best_loss=float(running),
        )
        self.history.append(entry)
        return entry

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.history], columns=HISTORY_COLUMNS)

    def stages_frame(self) -> pd.DataFrame:
        return pd.DataFrame([s.model_dump(exclude={"best_theta"}) for s in self.stages])


def _finite(value: float, what: str, where: str) -> float:
    if not np.isfinite(value):
        raise FloatingPointError(f"Non-finite {what} {value} at {where}")
    return float(value)


def initial_parameters(n_params: int, rng: np.random.Generator, init_range: float = np.pi,
                       initial: Optional[Sequence[float]] = None) -> np.ndarray:
    """Injected parameters when given, otherwise uniform in [-init_range, init_range]."""
    if initial is not None:
        theta = np.asarray(initial, dtype=float)
        if theta.shape != (n_params,):
            raise ValueError(f"Initial theta has {theta.size} entries, the circuits need {n_params}")
        return theta
    return rng.uniform(-init_range, init_range, size=n_params)


def cmaes_minimize(objective: Objective, config: CmaesConfig, rng: np.random.Generator,
                   x0: Optional[Sequence[float]] = None, state: Optional[RunState] = None,
                   stage: int = 1, shots: int = 0) -> RunState:
    """
    (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates
    and cumulative step-size adaptation.

    Stops on max_evaluations, max_iterations, target_loss (generation best)
    or a collapsed search distribution.
    """
    start = x0 if x0 is not None else config.initial_mean
    if start is None:
        raise ValueError("CMA-ES needs a start point (x0 or initial_mean)")
    state = state if state is not None else RunState()
    mean = np.array(start, dtype=float)
    n = mean.size
    lam = config.population_size or default_population_size(n)
    mu = lam // 2
    weights = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights ** 2)

    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n ** 2))

    sigma = config.sigma_init
    pc, ps = np.zeros(n), np.zeros(n)
    B, D = np.eye(n), np.ones(n)
    C = np.eye(n)
    inv_sqrt_c = np.eye(n)
    spent, generation = 0, 0

    while True:
        arz = rng.standard_normal((lam, n))
        arx = mean + sigma * (arz * D) @ B.T
        fitness = np.array([objective(x) for x in arx], dtype=float)
        spent += lam
        generation += 1
        state.evaluations += lam
        for value in fitness:
            _finite(value, "objective value", f"stage {stage} generation {generation}")

        order = np.argsort(fitness, kind="stable")
        best = order[0]
        state.offer(arx[best], fitness[best])
        record = state.record(stage, shots, fitness[best])

        old_mean = mean
        selected = arx[order[:mu]]
        mean = weights @ selected
        y = (mean - old_mean) / sigma
        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt_c @ y)
        hsig = (np.linalg.norm(ps) / np.sqrt(1 - (1 - cs) ** (2 * spent / lam)) / chi_n) < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + hsig * np.sqrt(cc * (2 - cc) * mueff) * y
        steps = (selected - old_mean) / sigma
        C = ((1 - c1 - cmu) * C
             + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * C)
             + cmu * (steps.T * weights) @ steps)
        sigma *= np.exp((cs / damps) * (np.linalg.norm(ps) / chi_n - 1))

        C = np.triu(C) + np.triu(C, 1).T
        eigenvalues, B = np.linalg.eigh(C)
        D = np.sqrt(np.maximum(eigenvalues, 1e-300))
        inv_sqrt_c = (B / D) @ B.T
        state.theta = mean.copy()

        if generation % config.log_every == 0:
            logger.info(
                f"Stage {stage} generation {generation}: loss {record.loss:.6g}, "
                f"best {record.best_loss:.6g}, sigma {sigma:.3g}, evaluations {state.evaluations}"
            )
        if config.target_loss is not None and fitness[best] <= config.target_loss:
            logger.info(f"Stage {stage}: target loss {config.target_loss:g} reached after {generation} generations")
            break
        if config.max_evaluations is not None and spent >= config.max_evaluations:
            break
        if config.max_iterations is not None and generation >= config.max_iterations:
            break
        if sigma * D.max() < config.tol_x:
            logger.info(f"Stage {stage}: search distribution collapsed after {generation} generations")
            break
    return state


def gradient_minimize(objective: Objective, gradient: Gradient, method: GradientMethod, config: GradientConfig,
                      x0: Sequence[float], state: Optional[RunState] = None, stage: int = 1,
                      shots: int = 0) -> RunState:
    """
    Gradient-based minimization with Adam or L-BFGS.

    Args:
        objective: Loss function of the parameter vector.
        gradient: Its gradient (parameter-shift or analytic).
        method: adam or lbfgs.
        config: Step sizes, tolerances and iteration cap.
        x0: Start point.
        state: Run state to extend; a fresh one is created when omitted.

    Returns:
        The run state, with one history record per iteration.
    """
    state = state if state is not None else RunState()
    x = np.array(x0, dtype=float)
    if GradientMethod(method) == GradientMethod.ADAM:
        _adam(objective, gradient, config, x, state, stage, shots)
    else:
        _lbfgs(objective, gradient, config, x, state, stage, shots)
    return state


def _adam(objective: Objective, gradient: Gradient, config: GradientConfig, x: np.ndarray,
          state: RunState, stage: int, shots: int) -> None:
    m, v = np.zeros_like(x), np.zeros_like(x)
    for t in range(1, config.max_iterations + 1):
        loss = _finite(objective(x), "loss", f"iteration {t}")
        g = gradient(x)
        state.evaluations += 2
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"Non-finite gradient at iteration {t}")
        state.offer(x, loss)
        record = state.record(stage, shots, loss)
        if t % config.log_every == 0:
            logger.info(f"Adam iteration {t}: loss {loss:.6g}, best {record.best_loss:.6g}, |g| {np.linalg.norm(g):.3g}")
        if (config.target_loss is not None and loss <= config.target_loss) or np.linalg.norm(g) <= config.gtol:
            break
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g ** 2
        m_hat = m / (1 - config.beta1 ** t)
        v_hat = v / (1 - config.beta2 ** t)
        x = x - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    state.theta = x


def _lbfgs(objective: Objective, gradient: Gradient, config: GradientConfig, x0: np.ndarray,
           state: RunState, stage: int, shots: int) -> None:
    last = {}

    def value_and_gradient(x: np.ndarray):
        loss = _finite(objective(x), "loss", f"evaluation {state.evaluations}")
        g = np.asarray(gradient(x), dtype=float)
        state.evaluations += 2
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"Non-finite gradient at evaluation {state.evaluations}")
        last["x"], last["loss"] = x.copy(), loss
        state.offer(x, loss)
        return loss, g

    def callback(xk: np.ndarray) -> None:
        if "x" in last and np.array_equal(xk, last["x"]):
            loss = last["loss"]
        else:
            loss = _finite(objective(xk), "loss", f"iteration {state.iterations + 1}")
            state.evaluations += 1
            state.offer(xk, loss)
        record = state.record(stage, shots, loss)
        if record.iteration % config.log_every == 0:
            logger.info(f"L-BFGS iteration {record.iteration}: loss {loss:.6g}, best {record.best_loss:.6g}")

    result = minimize(
        value_and_gradient,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iterations, "gtol": config.gtol, "ftol": config.ftol},
    )
    logger.info(f"L-BFGS finished after {result.nit} iterations: {result.message}")
    state.theta = np.asarray(result.x, dtype=float)


def staged_optimize(objective_factory: Callable[[int], Objective], schedule: ShotSchedule,
                    rng: np.random.Generator, x0: Sequence[float], population_size: Optional[int] = None,
                    state: Optional[RunState] = None, log_every: int = 10) -> RunState:
    """
    Run CMA-ES once per stage with that stage's shots and sigma_init.

    Each stage starts from the previous stage's best parameters. From the
    second stage on, the incumbent and the stage best are re-evaluated at
    the current shot count and the lower one becomes the best-ever point.
    """
    state = state if state is not None else RunState()
    mean = np.array(x0, dtype=float)
    for index, stage in enumerate(schedule.stages, start=1):
        objective = objective_factory(stage.shots)
        incumbent = state.best_theta
        state.begin_stage()
        iterations_before, evaluations_before = state.iterations, state.evaluations
        started = time.perf_counter()
        logger.info(f"Stage {index}: {stage.shots} shots, sigma_init {stage.sigma_init}")

        config = CmaesConfig(
            population_size=population_size,
            sigma_init=stage.sigma_init,
            max_iterations=stage.max_iterations,
            target_loss=stage.threshold,
            log_every=log_every,
        )
        cmaes_minimize(objective, config, rng, x0=mean, state=state, stage=index, shots=stage.shots)

        evaluations = state.evaluations - evaluations_before
        elapsed = time.perf_counter() - started
        stage_theta, stage_loss = state.stage_best_theta, state.stage_best_loss
        state.stages.append(StageSummary(
            stage=index,
            shots=stage.shots,
            sigma_init=stage.sigma_init,
            iterations=state.iterations - iterations_before,
            evaluations=evaluations,
            lowest_loss=stage_loss,
            avg_eval_seconds=elapsed / max(evaluations, 1),
            best_theta=tuple(float(v) for v in stage_theta),
        ))
        logger.info(f"Stage {index} done: lowest loss {stage_loss:.6g} over {evaluations} evaluations")

        if incumbent is not None:
            candidates = [incumbent, stage_theta]
            losses = [_finite(objective(c), "re-evaluated loss", f"stage {index}") for c in candidates]
            state.evaluations += len(candidates)
            winner = int(np.argmin(losses))
            state.best_theta, state.best_loss = np.array(candidates[winner]), losses[winner]
            logger.info(f"Stage {index}: incumbent re-evaluated at {losses[0]:.6g}, stage best at {losses[1]:.6g}")
        mean = np.array(stage_theta, dtype=float)
    return state
