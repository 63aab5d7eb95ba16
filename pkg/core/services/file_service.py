import os
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import logging

import pandas as pd

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "VQDE_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"

CONVERGENCE_FILE = "convergence.csv"
SOLUTION_FILE = "solution.csv"
STAGES_FILE = "stages.csv"
SUMMARY_FILE = "summary.txt"
CONFIG_ECHO_FILE = "config.echo"
LOG_FILE = "run.log"
REPORT_FILE = "report.txt"
CUT_ERRORS_FILE = "xcut_errors.csv"

# Files every completed (or failed) run leaves behind
REQUIRED_ARTIFACTS = (CONVERGENCE_FILE, SOLUTION_FILE, SUMMARY_FILE, CONFIG_ECHO_FILE)


def resolve_output_dir(cli_dir: Optional[str] = None, config_dir: Optional[str] = None) -> Path:
    """--output-dir, then the config's output_dir, then $VQDE_OUTPUT_DIR, then ./runs."""
    for candidate in (cli_dir, config_dir, os.environ.get(OUTPUT_DIR_ENV)):
        if candidate:
            return Path(candidate)
    return Path(DEFAULT_OUTPUT_DIR)


def format_summary_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, (list, tuple)):
        return ",".join(format_summary_value(v) for v in value)
    return str(value)


class FileService:
    """Run directory layout and the CSV / text artifacts inside it."""

    @staticmethod
    def ensure_output_directory_exists(output_dir: Union[str, Path]) -> Tuple[bool, str]:
        """
        Ensures the output directory exists.

        Args:
            output_dir: Directory holding run directories and the registry.

        Returns:
            Tuple of (success: bool, message: str)
        """
        try:
            output_dir = Path(output_dir)
            if not output_dir.exists():
                output_dir.mkdir(parents=True, exist_ok=True)
                logger.info(f"Created output directory at: {output_dir}")
                return True, f"Output directory created at: {output_dir}"
            return True, f"Output directory already exists at: {output_dir}"
        except OSError as e:
            error_msg = f"Failed to create output directory: {str(e)}"
            logger.error(error_msg, exc_info=True)
            return False, error_msg

    @staticmethod
    def create_run_directory(output_dir: Union[str, Path], benchmark: str, seed: int,
                             timestamp: Optional[datetime] = None) -> "FileService":
        """Creates `<output_dir>/<benchmark>-<timestamp>-<seed>`, suffixing a counter on collision."""
        output_dir = Path(output_dir)
        success, message = FileService.ensure_output_directory_exists(output_dir)
        if not success:
            raise OSError(message)

        stamp = (timestamp or datetime.now()).strftime("%Y%m%d-%H%M%S")
        base_name = f"{benchmark}-{stamp}-{seed}"
        run_dir = output_dir / base_name
        counter = 1
        while run_dir.exists():
            run_dir = output_dir / f"{base_name}_{counter}"
            counter += 1
            if counter > 100:
                raise OSError(f"Could not find a free run directory name for {base_name} after 100 attempts")
        run_dir.mkdir(parents=True)
        logger.info(f"Created run directory: {run_dir}")
        return FileService(run_dir)

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        """Header row, 17 significant digits, '\\n' line endings."""
        target = self.path(name)
        frame.to_csv(target, index=False, float_format="%.17g", lineterminator="\n")
        return target

    def write_text(self, text: str, name: str) -> Path:
        target = self.path(name)
        with open(target, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        return target

    def write_convergence(self, history: pd.DataFrame) -> Path:
        return self.write_csv(history, CONVERGENCE_FILE)

    def write_solution(self, solution: pd.DataFrame) -> Path:
        return self.write_csv(solution, SOLUTION_FILE)

    def write_stages(self, stages: pd.DataFrame) -> Path:
        return self.write_csv(stages, STAGES_FILE)

    def write_summary(self, summary: Dict[str, object]) -> Path:
        lines = [f"{key} = {format_summary_value(value)}" for key, value in summary.items() if value is not None]
        return self.write_text("\n".join(lines) + "\n", SUMMARY_FILE)

    def write_config_echo(self, config_text: str) -> Path:
        return self.write_text(config_text, CONFIG_ECHO_FILE)


def read_summary(path: Union[str, Path]) -> Dict[str, str]:
    summary: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            key, sep, value = line.partition("=")
            if sep:
                summary[key.strip()] = value.strip()
    return summary


def read_run_artifacts(run_dir: Union[str, Path]) -> Dict[str, object]:
    """
    Loads the artifacts of a finished run.

    Returns:
        Dict with summary (dict of strings), convergence, solution and
        stages (DataFrame or None) and config_text.

    Raises:
        FileNotFoundError: the directory or one of the required artifacts is missing.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"Run directory not found: {run_dir}")
    missing = [name for name in REQUIRED_ARTIFACTS if not (run_dir / name).is_file()]
    if missing:
        raise FileNotFoundError(f"Missing run artifact(s) in {run_dir}: {', '.join(missing)}")

    stages_path = run_dir / STAGES_FILE
    return {
        "summary": read_summary(run_dir / SUMMARY_FILE),
        "convergence": pd.read_csv(run_dir / CONVERGENCE_FILE),
        "solution": pd.read_csv(run_dir / SOLUTION_FILE),
        "stages": pd.read_csv(stages_path) if stages_path.is_file() else None,
        "config_text": (run_dir / CONFIG_ECHO_FILE).read_text(encoding="utf-8"),
    }
