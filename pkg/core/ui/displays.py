"""Common UI components for displaying run data."""
from typing import Any, Dict, List, Optional

import pandas as pd

RUN_COLUMNS = ["id", "benchmark", "seed", "mode", "optimizer", "status", "best_loss", "max_abs_error",
               "iterations", "wall_time", "run_dir"]
GRADCHECK_COLUMNS = ["parameter", "function", "parameter_shift", "finite_difference", "abs_deviation"]


def _float(value: float) -> str:
    return f"{value:.6g}"


def display_table(df: pd.DataFrame, columns: Optional[List[str]] = None, empty_message: str = "Nothing to show."):
    if df is None or df.empty:
        print(empty_message)
        return
    shown = df[[c for c in columns if c in df.columns]] if columns else df
    print(shown.to_string(index=False, float_format=_float))


def display_runs_table(runs: List[Dict[str, Any]]):
    """Display registered runs, newest first."""
    if runs:
        print(f"Displaying {len(runs)} run(s).")
    display_table(pd.DataFrame(runs), RUN_COLUMNS, "No runs found.")


def display_gradcheck_table(table: pd.DataFrame):
    display_table(table, GRADCHECK_COLUMNS, "Circuit has no parameters.")
