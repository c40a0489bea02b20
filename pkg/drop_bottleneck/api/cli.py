"""
명령줄 인터페이스
train / eval / plot / sweep
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from drop_bottleneck import __version__
from drop_bottleneck.core.config import settings
from drop_bottleneck.core.exceptions import ConfigError, DropBottleneckError
from drop_bottleneck.core.logging import setup_logging
from drop_bottleneck.models.experiment import ExperimentConfig, load_config
from drop_bottleneck.services.experiments import evaluate_checkpoint, run_experiment, run_sweep
from drop_bottleneck.services.plotting import emit_plots

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drop-bottleneck", description="Drop-Bottleneck experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbs = parser.add_subparsers(dest="verb", required=True)

    def add_config_flags(sub: argparse.ArgumentParser):
        sub.add_argument("--config", required=True, help="experiment JSON config")
        sub.add_argument("--seed", type=int, default=None, help="run a single seed")
        sub.add_argument("--out", default=None, help="output directory")
        sub.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                         help="dotted config override, e.g. train.learning_rate=0.01")

    train = verbs.add_parser("train", help="run one experiment")
    add_config_flags(train)

    sweep = verbs.add_parser("sweep", help="run every (beta, seed) point of a config")
    add_config_flags(sweep)
    sweep.add_argument("--workers", type=int, default=1, help="parallel seed processes")

    for name, text in (("eval", "evaluate a run's checkpoint"), ("plot", "write plots for a run")):
        sub = verbs.add_parser(name, help=text)
        sub.add_argument("--out", required=True, help="run directory")
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    overrides: List[str] = list(args.override)
    if args.seed is not None:
        overrides += [f"experiment.seed={args.seed}", "experiment.seeds=[]"]
    return load_config(args.config, overrides)


def _output_dir(cfg: ExperimentConfig, args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(settings.output_root) / cfg.experiment.name / f"seed={cfg.experiment.seed}"


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger = setup_logging()
    try:
        if args.verb == "train":
            cfg = _load(args)
            out = _output_dir(cfg, args)
            report = run_experiment(cfg, out)
            if cfg.output.plots:
                emit_plots(out)
            _emit({"out": str(out), "summary": report["summary"]})
        elif args.verb == "sweep":
            cfg = _load(args)
            out = _output_dir(cfg, args)
            summary = run_sweep(cfg, out, workers=args.workers)
            if cfg.output.plots:
                emit_plots(out)
            _emit({"out": str(out), "summary": summary})
        elif args.verb == "eval":
            report = evaluate_checkpoint(args.out)
            _emit({name: {key: value for key, value in entry.items() if key != "drop_probabilities"}
                   for name, entry in report["drop_params"].items()})
        elif args.verb == "plot":
            _emit({"plots": [str(path) for path in emit_plots(args.out)]})
        return EXIT_OK
    except DropBottleneckError as e:
        logger.error("Command failed", verb=args.verb, error=type(e).__name__, message=str(e))
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_CONFIG if isinstance(e, ConfigError) else EXIT_FAILURE
    except Exception as e:
        logger.error(f"Unexpected error in {args.verb}: {e}", exc_info=True)
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_FAILURE
