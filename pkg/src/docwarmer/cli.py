"""Command-line entry point: ``docwarmer <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import config as C
from .runtime import Run, StageError, pipeline_stages, run_stage

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--backend", help="override backend.id (mock, echo, simulated, openai, gemini)")
    common.add_argument("--dry-run", action="store_true", help="validate the config and print the plan only")
    common.add_argument("--force", action="store_true", help="re-run stages already marked done")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="docwarmer", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("parse", "normalize OCR / PDF records into entity JSONL"),
        ("generate", "generate and verify synthetic QA records"),
        ("tune", "structural then semantic tuning of the Warmer"),
        ("infer", "run the recursive hint loop over the gold questions"),
        ("eval", "score traces and write per-iteration reports"),
        ("stats", "print synthetic subset statistics"),
        ("run", "all stages in order"),
    ]:
        sub.add_parser(name, parents=[common], help=help_)
    toy = sub.add_parser("toy", help="write a synthetic template-form corpus and a matching config")
    toy.add_argument("--out", required=True)
    toy.add_argument("--docs", type=int, default=50)
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--noisy", action="store_true")
    toy.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.backend:
        over["backend"] = {"id": args.backend}
    return over


def cmd_toy(args) -> int:
    from .datasets import make_toy_corpus

    corpus = make_toy_corpus(args.out, args.docs, args.seed, args.noisy)
    cfg = {
        "seed": args.seed,
        "output_dir": os.path.join(args.out, "runs"),
        "dataset": {"name": "toy-noisy" if args.noisy else "toy", "ocr_dir": corpus.ocr_dir,
                    "golds": os.path.join(args.out, "golds.jsonl")},
        "generation": {"entities_per_doc": 20},
        "backend": {"id": "mock", "script": corpus.script_path},
        "tuning": {"batch_size": 4, "learning_rate": 1e-3},
    }
    path = os.path.join(args.out, "config.yaml")
    import yaml

    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
    print(f"wrote {len(corpus.sets)} documents and {len(corpus.golds)} questions; config at {path}")
    return EXIT_OK


def cmd_stats(run: Run) -> int:
    path = run.path("qa", "stats.json")
    if not os.path.exists(path):
        raise StageError("no stats yet; run generate first")
    with open(path, encoding="utf-8") as fh:
        stats = json.load(fh)
    cols = ["# Doc", "# QA", "Set 1", "Set 2", "Set 3", "Set 4"]
    print("Dataset".ljust(12) + "".join(c.rjust(8) for c in cols))
    print(str(stats.get("dataset", "")).ljust(12) + "".join(str(stats[c]).rjust(8) for c in cols))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "toy":
        return cmd_toy(args)
    try:
        cfg = C.load_config(args.config, _overrides(args))
    except (C.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    stages = pipeline_stages(cfg) if args.command == "run" else [args.command]
    if args.dry_run:
        run = Run.open(cfg, create=False)
        print(f"config hash {run.hash}; run directory {run.root}")
        print("stages: " + " -> ".join(stages))
        return EXIT_OK
    run = Run.open(cfg)
    try:
        if args.command == "stats":
            return cmd_stats(run)
        for stage in stages:
            ran = run_stage(run, stage, args.force)
            print(f"{stage}: {'done' if ran else 'already done, skipped'}")
        if "eval" in stages:
            with open(run.path("reports", "report.txt"), encoding="utf-8") as fh:
                print(fh.read(), end="")
    except (StageError, KeyError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
