"""Command-line surface: solve, gradcheck, report, init-config, runs."""
import argparse
import logging
from typing import List, Optional

from core.controllers.run_controller import RunController
from core.services.config_service import PRESETS
from core.services.encoding_service import EvaluationMode
from core.ui.base import show_operation_result, show_summary
from core.ui.displays import display_gradcheck_table, display_runs_table

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqde",
        description="Hybrid variational differential equation solver on a simulated quantum backend.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    modes = [mode.value for mode in EvaluationMode]

    solve = commands.add_parser("solve", help="optimize a benchmark and write its run directory")
    solve.add_argument("--config", required=True, help="key = value run configuration")
    solve.add_argument("--seed", type=int, help="override the configured master seed")
    solve.add_argument("--mode", choices=modes, help="override the evaluation mode")
    solve.add_argument("--output-dir", help="parent directory for run directories")

    gradcheck = commands.add_parser("gradcheck", help="compare parameter-shift and finite-difference gradients")
    gradcheck.add_argument("--config", required=True)
    gradcheck.add_argument("--seed", type=int, help="seed for the random parameter point")
    gradcheck.add_argument("--mode", choices=modes, help="override the evaluation mode (must end up exact)")
    gradcheck.add_argument("--step", type=float, default=1e-3, help="finite-difference step")
    gradcheck.add_argument("--tolerance", type=float, default=1e-5)

    report = commands.add_parser("report", help="error and stage tables of a finished run")
    report.add_argument("run_dir")

    init_config = commands.add_parser("init-config", help="write a preset run configuration")
    init_config.add_argument("--preset", required=True, choices=sorted(PRESETS))
    init_config.add_argument("--output", help="target file (default <preset>.conf)")

    runs = commands.add_parser("runs", help="list registered runs")
    runs.add_argument("--output-dir")
    runs.add_argument("--benchmark", choices=["hypoelastic", "burgers"])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    controller = RunController()

    if args.command == "solve":
        result = controller.solve(args.config, seed=args.seed, mode=args.mode, output_dir=args.output_dir)
        code = show_operation_result(result)
        if result["success"]:
            show_summary(result["summary"])
        return code

    if args.command == "gradcheck":
        result = controller.gradcheck(args.config, seed=args.seed, step=args.step,
                                      tolerance=args.tolerance, mode=args.mode)
        if "table" in result:
            display_gradcheck_table(result["table"])
        return show_operation_result(result)

    if args.command == "report":
        result = controller.report(args.run_dir)
        if result["success"]:
            print(result["text"], end="")
        return show_operation_result(result)

    if args.command == "init-config":
        return show_operation_result(controller.init_config(args.preset, args.output))

    if args.command == "runs":
        result = controller.list_runs(args.output_dir, args.benchmark)
        if result["success"]:
            display_runs_table(result["runs"])
        return show_operation_result(result)

    logger.error(f"Unknown command {args.command}")
    return 1
