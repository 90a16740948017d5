# main.py
import argparse
import sys
from typing import List, Optional

from config.experiment import ExperimentConfig, load_config
from config.settings import Settings
from services.experiment_manager import EXIT_OK, EXIT_STAGE_FAILED, EXIT_VERIFY_FAILED, ExperimentManager
from utils.errors import NpprError
from utils.logger import logger

COMMANDS = ("train", "evaluate", "sweep", "verify", "export-samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nppr",
        description="Estimate non-parametric probabilistic robustness of a classifier on synthetic data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
        p.add_argument("--config", required=needs_config, help="experiment YAML file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="run directory (defaults to output_dir or $NPPR_OUTPUT_ROOT/<name>)")
        p.add_argument(
            "--strict",
            action=argparse.BooleanOptionalAction,
            default=True,
            help="reject unknown config keys (--no-strict drops them with a warning)",
        )

    train = sub.add_parser("train", help="build data, train classifier and generator, evaluate and verify")
    common(train)
    train.add_argument("--resume", action="store_true", help="continue from the checkpoint in the run directory")

    common(sub.add_parser("evaluate", help="re-evaluate a trained run directory"))
    common(sub.add_parser("export-samples", help="write perturbation samples of a trained run to samples.csv"))
    common(sub.add_parser("sweep", help="run the grid in the config's sweep section"))

    verify = sub.add_parser("verify", help="check the ordering properties across finished runs")
    common(verify, needs_config=False)
    verify.add_argument("runs", nargs="+", help="run directories, or a sweep directory containing them")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config, strict=args.strict)
    if args.seed is not None:
        cfg = cfg.variant(seed=args.seed)
    return cfg


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = Settings()
    manager = ExperimentManager(settings)

    try:
        if args.command == "verify":
            verdict = manager.verify(args.runs, out=args.out)
            for result in verdict.results:
                mark = "✅" if result.passed else "❌"
                print(f"{mark} {result.name}: {result.lhs:.4f} ≤ {result.rhs:.4f} + {result.half_width:.4f}")
            return EXIT_OK if verdict.passed else EXIT_VERIFY_FAILED

        cfg = _load(args)
        if args.command == "sweep":
            sweep = manager.sweep(cfg, out=args.out)
            print(f"📋 {len(sweep.runs)} runs → {sweep.root}")
            for name, verdict in sweep.verdicts.items():
                print(f"{'✅' if verdict.passed else '❌'} {name}")
            return sweep.exit_code

        result = manager.run(cfg, command=args.command, out=args.out, resume=getattr(args, "resume", False))
        if result.report is not None:
            print("=" * 60)
            for name, value in result.report.summary().items():
                print(f"  {name:<16} {value}")
            print("=" * 60)
        if result.failed_stage:
            print(f"❌ stage '{result.failed_stage}' failed: {result.error}", file=sys.stderr)
        elif result.verdict is not None:
            print(f"{'✅' if result.verdict.passed else '❌'} verification: {len(result.verdict.failures)} failures")
        return result.exit_code
    except NpprError as e:
        logger.error(f"❌ {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE_FAILED


if __name__ == "__main__":
    sys.exit(main())
