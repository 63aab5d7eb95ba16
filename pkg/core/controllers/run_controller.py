"""Controller layer mapping run operations to results with exit codes."""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import ValidationError

from core.services.config_service import load_config, preset_config, save_config
from core.services.run_service import RunService, apply_overrides

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NUMERICAL_FAILURE = 2
EXIT_MISSING_ARTIFACT = 3


def _failure(error: Exception) -> Dict[str, Any]:
    if isinstance(error, FileNotFoundError):
        code, kind = EXIT_MISSING_ARTIFACT, "Missing file"
    elif isinstance(error, OSError):
        code, kind = EXIT_MISSING_ARTIFACT, "File error"
    elif isinstance(error, (ValidationError, ValueError)):
        code, kind = EXIT_CONFIG_ERROR, "Configuration error"
    elif isinstance(error, (FloatingPointError, ArithmeticError)):
        code, kind = EXIT_NUMERICAL_FAILURE, "Numerical failure"
    else:
        raise error
    return {"success": False, "message": f"{kind}: {error}", "exit_code": code}


class RunController:
    def __init__(self):
        self.service = RunService()

    def solve(self, config_path: str, seed: Optional[int] = None, mode: Optional[str] = None,
              output_dir: Optional[str] = None) -> Dict[str, Any]:
        """Load, override and solve; returns the run directory and summary."""
        try:
            config = apply_overrides(load_config(config_path), seed=seed, mode=mode)
            result = self.service.solve(config, output_dir=output_dir)
        except Exception as e:
            logger.error(f"solve failed for {config_path}: {e}", exc_info=True)
            return _failure(e)
        return {
            "success": True,
            "message": f"Run written to {result['run_dir']}",
            "exit_code": EXIT_OK,
            "run_dir": str(result["run_dir"]),
            "summary": result["summary"],
        }

    def gradcheck(self, config_path: str, seed: Optional[int] = None, step: float = 1e-3,
                  tolerance: float = 1e-5, mode: Optional[str] = None) -> Dict[str, Any]:
        try:
            config = apply_overrides(load_config(config_path), mode=mode)
            result = self.service.gradcheck(config, seed=seed, step=step, tolerance=tolerance)
        except Exception as e:
            logger.error(f"gradcheck failed for {config_path}: {e}", exc_info=True)
            return _failure(e)

        message = f"max deviation {result['max_deviation']:.3e} (tolerance {tolerance:g})"
        return {
            "success": result["passed"],
            "message": f"Gradient check {'passed' if result['passed'] else 'failed'}: {message}",
            "exit_code": EXIT_OK if result["passed"] else EXIT_NUMERICAL_FAILURE,
            "table": result["table"],
        }

    def report(self, run_dir: str) -> Dict[str, Any]:
        try:
            result = self.service.report(run_dir)
        except Exception as e:
            logger.error(f"report failed for {run_dir}: {e}", exc_info=True)
            return _failure(e)
        return {
            "success": True,
            "message": f"Report written to {Path(run_dir) / 'report.txt'}",
            "exit_code": EXIT_OK,
            "text": result["text"],
        }

    def init_config(self, preset: str, output: Optional[str] = None) -> Dict[str, Any]:
        try:
            path = save_config(preset_config(preset), output or f"{preset}.conf")
        except Exception as e:
            logger.error(f"init-config failed for preset {preset}: {e}", exc_info=True)
            return _failure(e)
        return {"success": True, "message": f"Wrote preset '{preset}' to {path}", "exit_code": EXIT_OK}

    def list_runs(self, output_dir: Optional[str] = None, benchmark: Optional[str] = None) -> Dict[str, Any]:
        try:
            runs = self.service.list_runs(output_dir, benchmark)
        except Exception as e:
            logger.error(f"Listing runs failed: {e}", exc_info=True)
            return {"success": False, "message": f"Could not read run registry: {e}", "exit_code": EXIT_MISSING_ARTIFACT}
        return {
            "success": True,
            "message": f"{len(runs)} run(s) registered",
            "exit_code": EXIT_OK,
            "runs": [run.model_dump(exclude={"stages"}) for run in runs],
        }
