import logging
import re
from datetime import datetime

import numpy as np
import pandas as pd
import pytest

from core.controllers.run_controller import (
    EXIT_CONFIG_ERROR,
    EXIT_MISSING_ARTIFACT,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    RunController,
)
from core.services.config_service import load_config, parse_config_text, preset_config, save_config
from core.services.encoding_service import EvaluationMode, EvaluationSettings
from core.services.file_service import FileService, read_run_artifacts, read_summary, resolve_output_dir
from core.services.optimizer_service import HISTORY_COLUMNS
from core.services.run_service import RunService, apply_overrides
from core.ui.cli import main


def with_initial_theta(config, theta):
    optimizer = config.optimizer.model_copy(update={"initial_theta": tuple(theta)})
    return config.model_copy(update={"optimizer": optimizer})


class TestOutputDirectories:
    def test_precedence(self, monkeypatch):
        monkeypatch.setenv("VQDE_OUTPUT_DIR", "from-env")
        assert str(resolve_output_dir("cli", "config")) == "cli"
        assert str(resolve_output_dir(None, "config")) == "config"
        assert str(resolve_output_dir()) == "from-env"
        monkeypatch.delenv("VQDE_OUTPUT_DIR")
        assert str(resolve_output_dir()) == "runs"

    def test_name_collision_gets_counter(self, output_dir):
        stamp = datetime(2024, 5, 1, 12, 30, 0)
        first = FileService.create_run_directory(output_dir, "burgers", 7, timestamp=stamp)
        second = FileService.create_run_directory(output_dir, "burgers", 7, timestamp=stamp)
        assert first.run_dir.name == "burgers-20240501-123000-7"
        assert second.run_dir.name == "burgers-20240501-123000-7_1"


class TestOverrides:
    def test_seed_and_mode(self, small_burgers_config):
        config = apply_overrides(small_burgers_config, seed=99, mode="exact")
        assert config.seed == 99
        assert config.evaluation.mode == EvaluationMode.EXACT
        assert config.evaluation.stack == small_burgers_config.evaluation.stack

    def test_mode_override_keeps_shot_settings(self, small_burgers_config):
        config = apply_overrides(small_burgers_config, mode="exact")
        assert config.evaluation == EvaluationSettings(mode=EvaluationMode.EXACT, shots=50, stack=2)

    def test_no_overrides(self, small_burgers_config):
        assert apply_overrides(small_burgers_config) is small_burgers_config

    def test_bad_mode(self, small_burgers_config):
        with pytest.raises(ValueError):
            apply_overrides(small_burgers_config, mode="analog")


class TestSolve:
    def test_hypoelastic_artifacts(self, small_hypoelastic_config, output_dir):
        result = RunService.solve(small_hypoelastic_config, output_dir=str(output_dir))
        run_dir = result["run_dir"]
        assert re.fullmatch(r"hypoelastic-\d{8}-\d{6}-3", run_dir.name)
        for name in ("convergence.csv", "solution.csv", "summary.txt", "config.echo", "run.log"):
            assert (run_dir / name).is_file()
        assert not (run_dir / "stages.csv").exists()

        convergence = pd.read_csv(run_dir / "convergence.csv")
        assert list(convergence.columns) == HISTORY_COLUMNS
        assert 1 <= len(convergence) <= 5
        solution = pd.read_csv(run_dir / "solution.csv")
        assert list(solution.columns) == [
            "x", "u_pred", "u_exact", "u_abs_error", "sigma_pred", "sigma_exact", "sigma_abs_error",
        ]
        assert len(solution) == 101

        summary = read_summary(run_dir / "summary.txt")
        assert summary["status"] == "completed"
        assert float(summary["best_loss"]) <= convergence["best_loss"].min() + 1e-12
        assert float(summary["max_abs_error_u"]) == pytest.approx(solution["u_abs_error"].max())
        assert len(summary["best_theta"].split(",")) == 5
        assert parse_config_text((run_dir / "config.echo").read_text()) == small_hypoelastic_config

    def test_run_log_written_without_logging_setup(self, small_hypoelastic_config, output_dir):
        root = logging.getLogger()
        previous = root.level
        root.setLevel(logging.WARNING)
        try:
            run_dir = RunService.solve(small_hypoelastic_config, output_dir=str(output_dir))["run_dir"]
            assert root.level == logging.WARNING
        finally:
            root.setLevel(previous)
        text = (run_dir / "run.log").read_text()
        assert "Optimizing 5 parameters with lbfgs" in text
        assert "Run finished" in text

    def test_adam_warmup_before_lbfgs(self, small_hypoelastic_config, output_dir):
        optimizer = small_hypoelastic_config.optimizer.model_copy(update={"warmup_iterations": 2})
        config = small_hypoelastic_config.model_copy(update={"optimizer": optimizer})
        result = RunService.solve(config, output_dir=str(output_dir))
        state = result["state"]
        assert 2 < state.iterations <= 5
        assert "Adam warm-up for 2 iterations" in (result["run_dir"] / "run.log").read_text()

    def test_shift_holds_in_solution(self, small_hypoelastic_config, output_dir):
        solution = RunService.solve(small_hypoelastic_config, output_dir=str(output_dir))
        frame = pd.read_csv(solution["run_dir"] / "solution.csv")
        assert frame["u_pred"].iloc[0] == pytest.approx(0.0, abs=1e-12)
        assert frame["sigma_pred"].iloc[0] == pytest.approx(12.0, abs=1e-12)

    def test_staged_burgers_run(self, small_burgers_config, output_dir):
        result = RunService.solve(small_burgers_config, output_dir=str(output_dir))
        stages = pd.read_csv(result["run_dir"] / "stages.csv")
        assert list(stages["shots"]) == [50, 100]
        state = result["state"]
        assert np.isfinite(state.best_loss)
        assert state.best_theta.shape == (6,)
        assert set(pd.read_csv(result["run_dir"] / "convergence.csv")["stage"]) == {1, 2}

    def test_deterministic_convergence(self, small_burgers_config, output_dir):
        first = RunService.solve(small_burgers_config, output_dir=str(output_dir))
        second = RunService.solve(small_burgers_config, output_dir=str(output_dir))
        assert first["run_dir"] != second["run_dir"]
        assert (first["run_dir"] / "convergence.csv").read_bytes() == (
            second["run_dir"] / "convergence.csv").read_bytes()

    def test_registry(self, small_burgers_config, small_hypoelastic_config, output_dir):
        RunService.solve(small_hypoelastic_config, output_dir=str(output_dir))
        RunService.solve(small_burgers_config, output_dir=str(output_dir))
        runs = RunService.list_runs(str(output_dir))
        assert [r.benchmark for r in runs] == ["burgers", "hypoelastic"]
        assert all(r.status == "completed" for r in runs)
        assert [s.shots for s in runs[0].stages] == [50, 100]
        assert [r.benchmark for r in RunService.list_runs(str(output_dir), benchmark="hypoelastic")] == ["hypoelastic"]

    def test_failed_run_keeps_partial_artifacts(self, small_hypoelastic_config, output_dir):
        config = with_initial_theta(small_hypoelastic_config, [0.1, 0.2])
        with pytest.raises(ValueError):
            RunService.solve(config, output_dir=str(output_dir))
        (run_dir,) = [p for p in output_dir.iterdir() if p.is_dir()]
        summary = read_summary(run_dir / "summary.txt")
        assert summary["status"] == "failed"
        assert "Initial theta" in summary["message"]
        assert (run_dir / "convergence.csv").read_text() == ",".join(HISTORY_COLUMNS) + "\n"
        assert RunService.list_runs(str(output_dir))[0].status == "failed"


class TestGradcheck:
    def test_hypoelastic_passes(self, small_hypoelastic_config):
        result = RunService.gradcheck(small_hypoelastic_config)
        assert result["passed"]
        assert list(result["table"]["function"]) == ["u"] * 3 + ["sigma"] * 2
        assert result["max_deviation"] <= 1e-5

    def test_burgers_passes(self, exact_burgers_config):
        result = RunService.gradcheck(exact_burgers_config, seed=11)
        assert result["passed"]
        assert result["max_deviation"] <= 1e-5

    def test_tolerance_bounds_absolute_deviation(self, small_hypoelastic_config):
        deviation = RunService.gradcheck(small_hypoelastic_config)["max_deviation"]
        assert deviation > 0
        assert not RunService.gradcheck(small_hypoelastic_config, tolerance=deviation / 2)["passed"]
        assert RunService.gradcheck(small_hypoelastic_config, tolerance=deviation)["passed"]

    def test_sampled_mode_refused(self, small_burgers_config):
        with pytest.raises(ValueError, match="exact"):
            RunService.gradcheck(small_burgers_config)

    def test_step_must_be_positive(self, small_hypoelastic_config):
        with pytest.raises(ValueError):
            RunService.gradcheck(small_hypoelastic_config, step=0.0)

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["hypoelastic", "burgers-case1"])
    def test_presets_pass_for_random_points(self, name):
        config = apply_overrides(preset_config(name), mode="exact")
        for seed in range(20):
            result = RunService.gradcheck(config, seed=seed)
            assert result["passed"]
            assert result["max_deviation"] <= 1e-5


class TestReport:
    def test_hypoelastic_report(self, small_hypoelastic_config, output_dir):
        run_dir = RunService.solve(small_hypoelastic_config, output_dir=str(output_dir))["run_dir"]
        report = RunService.report(run_dir)
        assert report["stages"] is None
        assert list(report["fields"]["field"]) == ["u", "sigma"]
        assert report["cuts"] is None
        assert (run_dir / "report.txt").read_text() == report["text"]
        assert "Field errors" in report["text"]

    def test_burgers_report(self, small_burgers_config, output_dir):
        run_dir = RunService.solve(small_burgers_config, output_dir=str(output_dir))["run_dir"]
        report = RunService.report(run_dir)
        assert list(report["stages"].columns) == ["shots", "sigma_init", "avg_eval_seconds", "lowest_loss"]
        assert list(report["stages"].index) == [1, 2]
        assert (run_dir / "xcut_errors.csv").is_file()
        assert "Stage summary" in report["text"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunService.report(tmp_path / "nowhere")

    def test_missing_artifact(self, tmp_path):
        (tmp_path / "summary.txt").write_text("status = completed\n")
        with pytest.raises(FileNotFoundError, match="convergence.csv"):
            read_run_artifacts(tmp_path)


class TestController:
    @pytest.fixture
    def config_path(self, small_hypoelastic_config, output_dir, tmp_path):
        config = small_hypoelastic_config.model_copy(update={"output_dir": str(output_dir)})
        return str(save_config(config, tmp_path / "small.conf"))

    def test_solve(self, config_path):
        result = RunController().solve(config_path)
        assert result["exit_code"] == EXIT_OK
        assert result["summary"]["status"] == "completed"

    def test_solve_with_seed_override(self, config_path):
        result = RunController().solve(config_path, seed=21)
        assert result["run_dir"].endswith("-21")

    def test_config_error(self, tmp_path):
        path = tmp_path / "broken.conf"
        path.write_text("benchmark = hypoelastic\nencoding.u.form = one_local_z\nencoding.u.registers = 2\n"
                        "encoding.sigma.form = global_diagonal\nencoding.sigma.registers = 1\nseedd = 3\n")
        result = RunController().solve(str(path))
        assert result["exit_code"] == EXIT_CONFIG_ERROR
        assert "seedd" in result["message"]

    def test_numerical_failure(self, small_hypoelastic_config, output_dir, tmp_path):
        config = with_initial_theta(small_hypoelastic_config, [np.nan] * 5)
        path = save_config(config.model_copy(update={"output_dir": str(output_dir)}), tmp_path / "nan.conf")
        assert RunController().solve(str(path))["exit_code"] == EXIT_NUMERICAL_FAILURE

    def test_missing_config(self, tmp_path):
        assert RunController().solve(str(tmp_path / "absent.conf"))["exit_code"] == EXIT_MISSING_ARTIFACT

    def test_gradcheck(self, config_path):
        result = RunController().gradcheck(config_path)
        assert result["exit_code"] == EXIT_OK
        assert result["success"]

    def test_gradcheck_failure_exit_code(self, config_path):
        result = RunController().gradcheck(config_path, tolerance=1e-30)
        assert result["exit_code"] == EXIT_NUMERICAL_FAILURE
        assert not result["success"]

    def test_gradcheck_refuses_sampled_mode(self, config_path):
        assert RunController().gradcheck(config_path, mode="shots")["exit_code"] == EXIT_CONFIG_ERROR

    def test_report_missing_run(self, tmp_path):
        assert RunController().report(str(tmp_path / "gone"))["exit_code"] == EXIT_MISSING_ARTIFACT

    def test_list_runs(self, config_path, output_dir):
        RunController().solve(config_path)
        result = RunController().list_runs(str(output_dir))
        assert result["exit_code"] == EXIT_OK
        assert len(result["runs"]) == 1


class TestCli:
    def test_init_config(self, tmp_path, capsys):
        target = tmp_path / "case2.conf"
        assert main(["init-config", "--preset", "burgers-case2", "--output", str(target)]) == 0
        assert load_config(target) == preset_config("burgers-case2")
        assert "burgers-case2" in capsys.readouterr().out

    def test_report_missing_directory(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "missing")]) == 3
        assert "Missing file" in capsys.readouterr().err

    def test_solve_and_report(self, small_hypoelastic_config, output_dir, tmp_path, capsys):
        path = save_config(small_hypoelastic_config, tmp_path / "small.conf")
        assert main(["solve", "--config", str(path), "--output-dir", str(output_dir)]) == 0
        (run_dir,) = [p for p in output_dir.iterdir() if p.is_dir()]
        assert main(["report", str(run_dir)]) == 0
        assert "Field errors" in capsys.readouterr().out

    def test_gradcheck_command(self, small_hypoelastic_config, tmp_path, capsys):
        path = save_config(small_hypoelastic_config, tmp_path / "small.conf")
        assert main(["gradcheck", "--config", str(path), "--seed", "4"]) == 0
        assert "parameter_shift" in capsys.readouterr().out

    def test_mode_choice_validated(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["solve", "--config", str(tmp_path / "x.conf"), "--mode", "analog"])

    def test_runs_command(self, output_dir, capsys):
        assert main(["runs", "--output-dir", str(output_dir)]) == 0
        assert "No runs found." in capsys.readouterr().out


@pytest.mark.slow
class TestBenchmarkAccuracy:
    SEEDS = (1, 2, 3, 4, 7)

    def solve_seeds(self, config, output_dir):
        return {seed: RunService.solve(apply_overrides(config, seed=seed), output_dir=str(output_dir))
                for seed in self.SEEDS}

    def test_hypoelastic_preset(self, output_dir):
        results = self.solve_seeds(preset_config("hypoelastic"), output_dir)
        assert all(r["state"].iterations <= 500 for r in results.values())
        assert np.median([r["state"].best_loss for r in results.values()]) <= 1e-2
        assert np.median([r["errors"]["sigma"] for r in results.values()]) <= 1e-2
        assert np.median([r["errors"]["u"] for r in results.values()]) <= 5e-2
        # the preset's own seed
        assert results[7]["errors"]["sigma"] <= 1e-2

    def test_hypoelastic_loss_drops_within_200_iterations(self, output_dir):
        base = preset_config("hypoelastic")
        config = base.model_copy(update={"optimizer": base.optimizer.model_copy(update={"max_iterations": 200})})
        drops = [r["state"].history[0].loss / r["state"].best_loss
                 for r in self.solve_seeds(config, output_dir).values()]
        assert np.median(drops) >= 100

    def test_burgers_case1_schedule(self, output_dir):
        passed = 0
        for result in self.solve_seeds(preset_config("burgers-case1"), output_dir).values():
            lowest = [stage.lowest_loss for stage in result["state"].stages]
            passed += bool(np.all(np.diff(lowest) <= 0) and lowest[-1] <= 3.6e-3)
        assert passed >= 3

    def test_burgers_case2_exact_then_sampled_from_seed(self, output_dir):
        config = preset_config("burgers-case2")
        exact = RunService.solve(apply_overrides(config, mode="exact"), output_dir=str(output_dir))
        assert exact["state"].iterations <= 2000
        assert exact["state"].best_loss <= 5e-2

        sampled = RunService.solve(with_initial_theta(config, exact["state"].best_theta), output_dir=str(output_dir))
        assert sampled["state"].iterations <= 200
        assert sampled["state"].best_loss <= 1.1e-1
