"""Command-line entry point: ``inkcheck <verb> [options]``.

Verbs: gen-data, train-hwr, train-classifier, evaluate, calibrate, report.
Settings come from built-in defaults, then ``--config`` (INI sections such
as ``[hwr]``), then ``--set section.key=value`` and the dedicated flags.
Exit status is 0 on success, 1 for user errors (bad configuration, missing
inputs, mismatched checkpoints) and 2 for internal failures. Diagnostics go
to stderr; results go to files only.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .checkpoint import CheckpointError
from .pipeline import (SPLITS, ConfigError, RunConfig, calibrate_stage, evaluate_stage, gen_data, report_stage,
                       train_classifier_stage, train_hwr_stage)

log = logging.getLogger("inkcheck")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style run configuration")
    common.add_argument("--seed", type=int, help="run seed (required here or in the config)")
    common.add_argument("--output-dir", help="root for datasets, logs, scores and reports")
    common.add_argument("--checkpoint-dir", help="where checkpoints are written and read")
    common.add_argument("--wordlist", help="word list file (defaults to the bundled list)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any configuration value; repeatable")
    common.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")

    parser = argparse.ArgumentParser(prog="inkcheck", description="One-step misspelled handwriting detection.")
    verbs = parser.add_subparsers(dest="verb", required=True)

    gen = verbs.add_parser("gen-data", parents=[common], help="render a dataset split")
    gen.add_argument("--split", required=True, choices=SPLITS)
    gen.add_argument("--scenario", choices=("moderate", "difficult"), help="test split only; default all")
    gen.add_argument("--severity", type=int, choices=(1, 2, 3), help="test split only; default all")
    gen.add_argument("--count", type=int, help="number of examples (default from [data])")

    verbs.add_parser("train-hwr", parents=[common], help="train the recognizer / feature extractor")
    verbs.add_parser("train-classifier", parents=[common], help="train the head on the frozen extractor")
    for name, text in (("evaluate", "score test sets, calibrate and write reports"),
                       ("calibrate", "recompute thresholds from stored scores")):
        sub = verbs.add_parser(name, parents=[common], help=text)
        sub.add_argument("--min-recall", type=float, help="recall constraint (default from [evaluate])")
    verbs.add_parser("report", parents=[common], help="rebuild JSON/CSV/SVG reports from scores")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for flag, key in (("seed", "run.seed"), ("output_dir", "paths.output_dir"),
                      ("checkpoint_dir", "paths.checkpoint_dir"), ("wordlist", "paths.wordlist")):
        if getattr(args, flag) is not None:
            overrides[key] = str(getattr(args, flag))
    cfg = RunConfig.load(args.config, overrides)
    cfg.seed  # noqa: B018 - fail early when no seed was given
    return cfg


def run(args: argparse.Namespace) -> None:
    cfg = load_config(args)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    # the fully resolved settings of the latest command, for diffing runs
    (cfg.output_dir / "run.ini").write_text(cfg.dump(), encoding="utf-8")
    if args.verb == "gen-data":
        if args.split != "test" and (args.scenario or args.severity):
            raise ConfigError("--scenario and --severity apply to --split test only")
        if args.count is not None and args.count <= 0:
            raise ConfigError("--count must be positive")
        gen_data(cfg, args.split, args.scenario, args.severity, args.count)
    elif args.verb == "train-hwr":
        train_hwr_stage(cfg)
    elif args.verb == "train-classifier":
        train_classifier_stage(cfg)
    elif args.verb == "evaluate":
        evaluate_stage(cfg, args.min_recall)
    elif args.verb == "calibrate":
        calibrate_stage(cfg, args.min_recall)
    elif args.verb == "report":
        report_stage(cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="inkcheck: %(message)s", stream=sys.stderr, force=True)
    try:
        run(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # anything else is a defect, not a usage problem
        log.error("internal error: %s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
