"""Base UI components and utilities."""
import sys
from typing import Any, Dict, Optional


def show_operation_result(result: Dict[str, Any], success_message: Optional[str] = None) -> int:
    """Print the outcome of an operation and return its exit code."""
    if result.get("success"):
        print(success_message or result.get("message") or "Operation completed successfully!")
    else:
        print(f"Operation failed: {result.get('message', 'Unknown error')}", file=sys.stderr)
    return int(result.get("exit_code", 0 if result.get("success") else 1))


def show_summary(summary: Dict[str, Any]):
    """Print a key/value summary, skipping the parameter vector."""
    width = max((len(key) for key in summary), default=0)
    for key, value in summary.items():
        if key == "best_theta" or value is None:
            continue
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"  {key.ljust(width)}  {value}")
