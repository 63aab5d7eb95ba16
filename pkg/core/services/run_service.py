"""Solve, gradient check and report orchestration over the numerical services."""
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..database import crud, schemas
from ..database.base import get_db_context
from ..database.schemas import OptimizerKind, RunConfig, RunStatus
from .circuit_service import derive_rng
from .config_service import parse_config_text, serialize_config
from .encoding_service import EvaluationMode, EvaluationSettings, build_benchmark_encodings, evaluate_shifted_grid
from .file_service import (
    CUT_ERRORS_FILE,
    LOG_FILE,
    REPORT_FILE,
    FileService,
    read_run_artifacts,
    resolve_output_dir,
)
from .loss_service import CollocationGrid, LossConfig, PhysicsLoss
from .optimizer_service import (
    CmaesConfig,
    GradientConfig,
    GradientMethod,
    RunState,
    ShotSchedule,
    Stage,
    cmaes_minimize,
    gradient_minimize,
    initial_parameters,
    staged_optimize,
)
from .problem_service import ProblemDefinition, cut_errors, max_abs_error

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
SOLUTION_POINTS_1D = 101
STAGE_TABLE_COLUMNS = ["shots", "sigma_init", "avg_eval_seconds", "lowest_loss"]


def apply_overrides(config: RunConfig, seed: Optional[int] = None, mode: Optional[str] = None) -> RunConfig:
    """Command-line --seed / --mode on top of a loaded config."""
    update: Dict[str, Any] = {}
    if seed is not None:
        update["seed"] = int(seed)
    if mode is not None:
        update["evaluation"] = EvaluationSettings.model_validate({**config.evaluation.model_dump(), "mode": mode})
    return config.model_copy(update=update) if update else config


class RunService:
    @staticmethod
    def build_problem(config: RunConfig) -> ProblemDefinition:
        return config.problem

    @staticmethod
    def build_loss(config: RunConfig, seed: Optional[int] = None) -> PhysicsLoss:
        """Encoded functions, collocation grid and loss settings of a run."""
        problem = RunService.build_problem(config)
        functions = build_benchmark_encodings(config)
        grid = CollocationGrid.uniform(problem.domains(), config.loss.grid, cartesian=config.loss.cartesian)
        loss_config = LossConfig(bc_strategy=config.loss.bc_strategy, bc_weight=config.loss.bc_weight, grid=grid)
        logger.info(
            f"Loss for '{problem.kind}': {grid.points().shape[0]} collocation points, "
            f"BC strategy {loss_config.bc_strategy.value}"
        )
        return PhysicsLoss(problem, functions, loss_config, seed=config.seed if seed is None else seed)

    @staticmethod
    def shots_per_evaluation(config: RunConfig) -> int:
        if config.evaluation.mode == EvaluationMode.EXACT:
            return 0
        return config.evaluation.shots

    @staticmethod
    def optimize(config: RunConfig, loss: PhysicsLoss, state: RunState) -> np.ndarray:
        """Runs the configured optimizer into `state` and returns the start point."""
        optimizer = config.optimizer
        x0 = initial_parameters(loss.n_params, derive_rng(config.seed, 0), optimizer.init_range, optimizer.initial_theta)
        rng = derive_rng(config.seed, 1)
        shots = RunService.shots_per_evaluation(config)
        logger.info(f"Optimizing {loss.n_params} parameters with {optimizer.kind.value}")

        if optimizer.kind == OptimizerKind.CMAES and optimizer.stages:
            schedule = ShotSchedule(stages=tuple(Stage(**stage.model_dump()) for stage in optimizer.stages))
            staged_optimize(loss.with_shots, schedule, rng, x0, population_size=optimizer.population_size,
                            state=state, log_every=optimizer.log_every)
        elif optimizer.kind == OptimizerKind.CMAES:
            cmaes_config = CmaesConfig(
                population_size=optimizer.population_size,
                sigma_init=optimizer.sigma_init,
                max_evaluations=optimizer.max_evaluations,
                max_iterations=optimizer.max_iterations,
                target_loss=optimizer.target_loss,
                log_every=optimizer.log_every,
            )
            cmaes_minimize(loss, cmaes_config, rng, x0=x0, state=state, shots=shots)
        else:
            gradient_config = GradientConfig(
                learning_rate=optimizer.learning_rate,
                max_iterations=optimizer.max_iterations - optimizer.warmup_iterations,
                gtol=optimizer.gtol,
                target_loss=optimizer.target_loss,
                log_every=optimizer.log_every,
            )
            start = x0
            if optimizer.warmup_iterations:
                warmup = gradient_config.model_copy(update={"max_iterations": optimizer.warmup_iterations})
                logger.info(f"Adam warm-up for {optimizer.warmup_iterations} iterations")
                gradient_minimize(loss, loss.gradient, GradientMethod.ADAM, warmup, x0, state=state, shots=shots)
                start = state.best_theta
            gradient_minimize(loss, loss.gradient, GradientMethod(optimizer.kind.value), gradient_config, start,
                              state=state, shots=shots)
        return x0

    @staticmethod
    def solution_points(problem: ProblemDefinition, loss: PhysicsLoss) -> np.ndarray:
        """101 points across 1-D domains, the collocation grid otherwise."""
        if len(problem.variables) == 1:
            domain = problem.domains()[0]
            return np.linspace(domain.lo, domain.hi, SOLUTION_POINTS_1D).reshape(-1, 1)
        return loss.points

    @staticmethod
    def solution_frame(problem: ProblemDefinition, loss: PhysicsLoss, theta) -> pd.DataFrame:
        """Exact-mode predictions next to the analytic solution."""
        points = RunService.solution_points(problem, loss)
        shifts = problem.bc_shifts() if loss.config.uses_shift else {}
        exact = problem.analytic(points)
        parts = loss.split(theta)
        frame = pd.DataFrame({name: points[:, i] for i, name in enumerate(problem.variables)})
        for function in loss.functions:
            exact_function = function.with_evaluation(EvaluationSettings(mode=EvaluationMode.EXACT))
            predicted = evaluate_shifted_grid(exact_function, shifts.get(function.name), parts[function.name], points)
            frame[f"{function.name}_pred"] = predicted
            frame[f"{function.name}_exact"] = exact[function.name]
            frame[f"{function.name}_abs_error"] = np.abs(predicted - exact[function.name])
        return frame

    @staticmethod
    def _register_run(output_dir: Path, record: schemas.RunRecordCreate) -> Optional[int]:
        try:
            with get_db_context(output_dir) as db:
                return crud.create_run(db, record).id
        except Exception as e:
            logger.warning(f"Could not register run in {output_dir}: {e}")
            return None

    @staticmethod
    def _finish_run(output_dir: Path, run_id: Optional[int], update: schemas.RunRecordUpdate,
                    state: RunState) -> None:
        if run_id is None:
            return
        try:
            with get_db_context(output_dir) as db:
                crud.update_run(db, run_id, update)
                crud.add_stage_records(db, [
                    schemas.StageRecordCreate(run_id=run_id, **stage.model_dump(exclude={"best_theta"}))
                    for stage in state.stages
                ])
        except Exception as e:
            logger.warning(f"Could not update registry row {run_id}: {e}")

    @staticmethod
    def solve(config: RunConfig, output_dir: Optional[str] = None) -> Dict[str, Any]:
        """
        Optimizes the configured benchmark and writes its run directory.

        On failure the partial convergence log and a failed summary are kept
        before the exception propagates.
        """
        out = resolve_output_dir(output_dir, config.output_dir)
        files = FileService.create_run_directory(out, config.benchmark.value, config.seed)
        handler = logging.FileHandler(files.path(LOG_FILE), encoding="utf-8")
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler.setLevel(logging.INFO)
        root = logging.getLogger()
        root_level = root.level
        if root.getEffectiveLevel() > logging.INFO:
            root.setLevel(logging.INFO)
        root.addHandler(handler)

        files.write_config_echo(serialize_config(config))
        run_id = RunService._register_run(out, schemas.RunRecordCreate(
            run_dir=str(files.run_dir),
            benchmark=config.benchmark.value,
            seed=config.seed,
            mode=config.evaluation.mode.value,
            optimizer=config.optimizer.kind.value,
        ))
        state = RunState(seed=config.seed)
        started = time.perf_counter()
        summary: Dict[str, Any] = {
            "status": RunStatus.RUNNING.value,
            "benchmark": config.benchmark.value,
            "seed": config.seed,
            "mode": config.evaluation.mode.value,
            "optimizer": config.optimizer.kind.value,
        }
        try:
            problem = RunService.build_problem(config)
            loss = RunService.build_loss(config)
            summary["n_params"] = loss.n_params
            x0 = RunService.optimize(config, loss, state)

            best_theta = state.best_theta if state.best_theta is not None else x0
            solution = RunService.solution_frame(problem, loss, best_theta)
            errors = {name: max_abs_error(solution[f"{name}_pred"], solution[f"{name}_exact"])
                      for name in problem.functions}
            wall_time = time.perf_counter() - started

            files.write_convergence(state.history_frame())
            files.write_solution(solution)
            if state.stages:
                files.write_stages(state.stages_frame())
            summary.update({
                "status": RunStatus.COMPLETED.value,
                "iterations": state.iterations,
                "evaluations": state.evaluations,
                "best_loss": float(state.best_loss),
                "final_loss": state.history[-1].loss if state.history else None,
                **{f"max_abs_error_{name}": value for name, value in errors.items()},
                "wall_time": wall_time,
                "config": "config.echo",
                "best_theta": [float(v) for v in best_theta],
            })
            files.write_summary(summary)
            logger.info(
                f"Run finished in {wall_time:.1f}s: best loss {state.best_loss:.6g}, "
                + ", ".join(f"max|{name} error| {value:.3g}" for name, value in errors.items())
            )
            RunService._finish_run(out, run_id, schemas.RunRecordUpdate(
                status=RunStatus.COMPLETED.value,
                best_loss=float(state.best_loss),
                final_loss=summary["final_loss"],
                max_abs_error=max(errors.values()),
                iterations=state.iterations,
                evaluations=state.evaluations,
                wall_time=wall_time,
            ), state)
            return {"run_dir": files.run_dir, "summary": summary, "state": state, "errors": errors}
        except Exception as e:
            wall_time = time.perf_counter() - started
            logger.error(f"Run failed after {state.iterations} iterations: {e}", exc_info=True)
            files.write_convergence(state.history_frame())
            summary.update({
                "status": RunStatus.FAILED.value,
                "iterations": state.iterations,
                "evaluations": state.evaluations,
                "best_loss": float(state.best_loss) if state.history else None,
                "wall_time": wall_time,
                "message": str(e).replace("\n", " "),
            })
            files.write_summary(summary)
            RunService._finish_run(out, run_id, schemas.RunRecordUpdate(
                status=RunStatus.FAILED.value,
                iterations=state.iterations,
                evaluations=state.evaluations,
                wall_time=wall_time,
                message=str(e),
            ), state)
            raise
        finally:
            root.removeHandler(handler)
            root.setLevel(root_level)
            handler.close()

    @staticmethod
    def gradcheck(config: RunConfig, seed: Optional[int] = None, step: float = 1e-3,
                  tolerance: float = 1e-5) -> Dict[str, Any]:
        """
        Parameter-shift gradient against a five-point central difference.

        The check passes when max|ps - fd| <= tolerance.
        """
        if config.evaluation.mode != EvaluationMode.EXACT:
            raise ValueError(
                f"gradcheck needs exact expectations, config requests mode '{config.evaluation.mode.value}'"
            )
        if step <= 0:
            raise ValueError(f"Finite-difference step must be positive, got {step}")
        seed = config.seed if seed is None else seed
        loss = RunService.build_loss(config, seed=seed)
        theta = initial_parameters(loss.n_params, derive_rng(seed, 0), config.optimizer.init_range,
                                   config.optimizer.initial_theta)

        shift_gradient = loss.gradient(theta)
        finite_difference = np.zeros_like(theta)
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = step
            finite_difference[j] = (-loss(theta + 2 * e) + 8 * loss(theta + e)
                                    - 8 * loss(theta - e) + loss(theta - 2 * e)) / (12 * step)

        owners: List[str] = []
        for function in loss.functions:
            owners += [function.name] * function.n_params
        table = pd.DataFrame({
            "parameter": np.arange(theta.size),
            "function": owners,
            "theta": theta,
            "parameter_shift": shift_gradient,
            "finite_difference": finite_difference,
            "abs_deviation": np.abs(shift_gradient - finite_difference),
        })
        max_deviation = float(table["abs_deviation"].max()) if theta.size else 0.0
        passed = max_deviation <= tolerance
        logger.info(f"Gradient check: max deviation {max_deviation:.3e}, "
                    f"tolerance {tolerance:g}: {'pass' if passed else 'FAIL'}")
        return {
            "table": table,
            "max_deviation": max_deviation,
            "tolerance": tolerance,
            "passed": passed,
        }

    @staticmethod
    def stage_table(stages: Optional[pd.DataFrame]) -> Optional[pd.DataFrame]:
        if stages is None or stages.empty:
            return None
        return stages.set_index("stage")[STAGE_TABLE_COLUMNS]

    @staticmethod
    def field_error_table(problem: ProblemDefinition, solution: pd.DataFrame) -> pd.DataFrame:
        rows = []
        for name in problem.functions:
            error = solution[f"{name}_abs_error"]
            rows.append({
                "field": name,
                "points": int(error.size),
                "max_abs_error": float(error.max()),
                "mean_abs_error": float(error.mean()),
                "rms_error": float(np.sqrt(np.mean(error ** 2))),
            })
        return pd.DataFrame(rows)

    @staticmethod
    def report(run_dir: Union[str, Path]) -> Dict[str, Any]:
        """Writes report.txt (and xcut_errors.csv for 2-D problems) from a run's artifacts."""
        artifacts = read_run_artifacts(run_dir)
        files = FileService(run_dir)
        config = parse_config_text(artifacts["config_text"])
        problem = RunService.build_problem(config)
        summary, solution = artifacts["summary"], artifacts["solution"]

        lines = [f"Run {files.run_dir}", ""]
        lines += [f"{key}: {value}" for key, value in summary.items() if key != "best_theta"]

        stages = RunService.stage_table(artifacts["stages"])
        if stages is not None:
            lines += ["", "Stage summary", stages.to_string(float_format=lambda v: f"{v:.6g}")]

        fields = RunService.field_error_table(problem, solution) if not solution.empty else None
        if fields is not None:
            lines += ["", "Field errors", fields.to_string(index=False, float_format=lambda v: f"{v:.6g}")]

        cuts = None
        if len(problem.variables) == 2 and not solution.empty:
            name = problem.functions[0]
            points = solution[list(problem.variables)].to_numpy()
            cuts = cut_errors(points, solution[f"{name}_pred"], solution[f"{name}_exact"])
            files.write_csv(cuts, CUT_ERRORS_FILE)
            per_cut = cuts.groupby("x_cut")["abs_error"].agg(["max", "mean"]).rename(
                columns={"max": "max_abs_error", "mean": "mean_abs_error"})
            lines += ["", f"Error along t at fixed x ({name})",
                      per_cut.to_string(float_format=lambda v: f"{v:.6g}")]

        text = "\n".join(lines) + "\n"
        files.write_text(text, REPORT_FILE)
        logger.info(f"Wrote report to {files.path(REPORT_FILE)}")
        return {"text": text, "stages": stages, "fields": fields, "cuts": cuts}

    @staticmethod
    def list_runs(output_dir: Optional[str] = None, benchmark: Optional[str] = None,
                  limit: int = 100) -> List[schemas.RunRecord]:
        out = resolve_output_dir(output_dir)
        with get_db_context(out) as db:
            return [schemas.RunRecord.model_validate(run) for run in crud.get_runs(db, benchmark, 0, limit)]
