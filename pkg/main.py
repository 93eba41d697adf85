"""
OPAD active-learning simulator - command-line entry point

    python main.py generate --config configs/default.env --task detection --seed 7
    python main.py train-policy --config configs/default.env
    python main.py evaluate --config configs/default.env --out results
    python main.py report --out results
"""

import argparse
import logging
import sys

from src.opad.config import load_experiment_config
from src.opad.errors import OPADError
from src.opad.harness import cli_evaluate, cli_generate, cli_report, cli_train_policy
from src.opad.utils import setup_logging

logger = logging.getLogger("opad")


def cmd_generate(config) -> int:
    paths = cli_generate(config)
    print(f"Wrote {len(paths)} dataset file(s)")
    return 0


def cmd_train_policy(config) -> int:
    trained = cli_train_policy(config)
    for entry in trained:
        print(f"{entry['checkpoint']}  updates={entry['updates']}  final_loss={entry['final_loss']:.5f}")
    return 0


def cmd_evaluate(config) -> int:
    summary = cli_evaluate(config)
    print(summary.to_string(index=False))
    return 0


def cmd_report(config) -> int:
    summary = cli_report(config)
    print(summary.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Policy-learned acquisition for pool-based active learning")
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "generate": (cmd_generate, "Generate synthetic detection/sequence datasets"),
        "train-policy": (cmd_train_policy, "Train acquisition policies over simulated episodes"),
        "evaluate": (cmd_evaluate, "Run every strategy × labelling-mode cell over all seeds"),
        "report": (cmd_report, "Rebuild summary tables from the per-cycle CSVs"),
    }
    for name, (func, help_text) in commands.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="KEY=value config file")
        cmd.add_argument("--seed", type=int, default=None, help="Master seed")
        cmd.add_argument("--out", default=None, help="Output directory")
        cmd.add_argument("--task", choices=["detection", "sequence"], default=None,
                         help="Restrict to one task")
        cmd.add_argument("--workers", type=int, default=None, help="Worker processes for independent cells")
        cmd.add_argument("--log-level", default=None, help="Logging level")
        cmd.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        'seed': args.seed,
        'output_dir': args.out,
        'tasks': args.task,
        'workers': args.workers,
        'log_level': args.log_level,
    }
    try:
        config = load_experiment_config(args.config, {k: v for k, v in overrides.items() if v is not None})
        setup_logging(config.log_level, config.log_file)
        logger.info(f"Running {args.command} with master seed {config.seed} into {config.output_dir}")
        return args.func(config)
    except (OPADError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
