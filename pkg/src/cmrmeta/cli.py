"""``cmrmeta`` command line: synth, run, eval and gallery.

Exit status is 0 on success, 2 when some experiment cells failed and 1 on
configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data, meta
from .config import Config, ConfigError, dump_config, load_config
from .experiments import (EvaluationError, class_counts, evaluate, run_experiments, write_class_corpus,
                          write_gallery)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("cmrmeta")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="TOML configuration file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the run seeds with this single seed")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker processes for independent cells")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmrmeta", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--experiment", help="write the split corpus of this experiment instead of the raw classes")
    p.add_argument("--budget", type=int, help="labelled budget for --experiment (default: first configured)")

    p = sub.add_parser("run", help="run every (experiment, budget, mode, seed) cell")
    _common(p)
    p.add_argument("--save-corpora", action="store_true", help="also write each cell's split corpus")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split corpus")
    _common(p, out_required=False)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True, help="split corpus directory")

    p = sub.add_parser("gallery", help="write clean / degraded PGM pairs per artefact class")
    _common(p)
    return parser


def _config(args) -> Config:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seeds": [args.seed]})})
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    return cfg


def cmd_synth(args, cfg: Config) -> int:
    seed = cfg.run.seeds[0] if args.seed is not None else 0
    corpus = cfg.corpus.build(seed_offset=seed)
    if args.experiment is None:
        counts = write_class_corpus(corpus, args.out)
    else:
        chosen = [e for e in cfg.experiment_list() if e.name == args.experiment]
        if not chosen:
            raise ConfigError(f"unknown experiment {args.experiment!r}")
        budget = args.budget if args.budget is not None else cfg.run.budgets[0]
        splits = data.build_corpus(corpus, chosen[0].prior_classes, chosen[0].finetune_classes, budget)
        data.save_corpus(splits, args.out)
        counts = class_counts(splits)
    for name, n in counts.items():
        print(f"{name}\t{n}")
    return EXIT_OK


def cmd_run(args, cfg: Config) -> int:
    records = run_experiments(cfg, args.out, threads=args.threads, save_corpora=args.save_corpora)
    failed = [r for r in records if r["status"] != "ok"]
    for r in records:
        acc = "failed" if r["accuracy"] is None else f"{r['accuracy']:.4f}"
        print(f"{r['experiment']}\t{r['mode']}\tbudget={r['budget']}\tseed={r['seed']}\taccuracy={acc}")
    print(f"{len(records) - len(failed)}/{len(records)} cells succeeded; reports in {args.out}")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_eval(args, cfg: Config) -> int:
    model, _header = meta.load_checkpoint(args.checkpoint)
    splits = data.load_corpus(args.corpus)
    reports = evaluate(model, splits)
    result = {k: v.as_dict() for k, v in reports.items()}
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval.json").write_text(text + "\n")
    return EXIT_OK


def cmd_gallery(args, cfg: Config) -> int:
    seed = args.seed if args.seed is not None else 0
    for clean, degraded in write_gallery(args.out, seed=seed, size=cfg.corpus.image_size,
                                         frames=cfg.corpus.cine_frames):
        print(f"{clean}\t{degraded}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "eval": cmd_eval, "gallery": cmd_gallery}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.print_config:
            print(dump_config(cfg), end="")
            return EXIT_OK
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, data.ConfigurationError, meta.ConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
    except (EvaluationError, data.CorpusIntegrityError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
