"""Experiment harness: every (experiment, budget, mode, seed) cell end to end."""

from __future__ import annotations

import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import pgm
from .config import Config, ExperimentDef
from .data import CorpusConfig, DatasetSplits, build_corpus, sample_id, save_corpus, synthesize_class
from .kspace import CLASS_ORDER, ArtefactParams, synthesize_sample
from .meta import FineTunedModel, Mode, history_csv, predict, run_mode, save_checkpoint
from .metrics import METRICS, MetricReport, compute_metrics, confusion, runs_csv, table_csv
from .phantom import generate_phantom

log = logging.getLogger(__name__)


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cell:
    experiment: ExperimentDef
    budget: int
    mode: str
    seed: int

    @property
    def tag(self) -> str:
        return f"{self.experiment.name}_{self.mode}_b{self.budget}_s{self.seed}"


def enumerate_cells(cfg: Config) -> list[Cell]:
    return [Cell(exp, budget, mode, seed)
            for exp in cfg.experiment_list()
            for budget in cfg.run.budgets
            for mode in cfg.run.modes
            for seed in cfg.run.seeds]


def evaluate(model: FineTunedModel, splits: DatasetSplits) -> dict[str, MetricReport]:
    """Metrics on the unlabelled unseen split; the only reader of hidden labels."""
    pool = splits.unseen_unlabelled
    if len(pool) == 0:
        raise EvaluationError("no test samples: the unlabelled unseen split is empty")
    if pool.images.shape[1] != model.spec.input_size:
        raise EvaluationError(f"checkpoint expects {model.spec.input_size}px images, corpus has {pool.images.shape[1]}px")
    unknown = set(splits.finetune_codes) - set(model.eval_codes)
    if unknown:
        raise EvaluationError(f"checkpoint cannot predict label codes {sorted(unknown)}")
    pred = predict(model, pool.images)
    truth = splits.hidden.reveal(pool.sample_ids)
    cm = confusion(truth, pred, classes=sorted(set(splits.finetune_codes) | set(model.eval_codes)))
    return {"weighted": compute_metrics(cm, "weighted"), "macro": compute_metrics(cm, "macro")}


_corpus_cache: dict[tuple, dict] = {}


def cell_splits(cfg: Config, cell: Cell) -> DatasetSplits:
    corpus = cfg.corpus.build(seed_offset=cell.seed)
    cache = _corpus_cache.setdefault((cfg.canonical_json(), cell.seed), {})
    return build_corpus(corpus, cell.experiment.prior_classes, cell.experiment.finetune_classes, cell.budget, cache)


def run_cell(cfg: Config, cell: Cell, out: Path | None = None, save_corpora: bool = False) -> dict:
    record = {"spec_hash": cfg.spec_hash(), "experiment": cell.experiment.name, "mode": cell.mode,
              "budget": cell.budget, "seed": cell.seed, "status": "ok", "checkpoint": None}
    start = time.perf_counter()
    try:
        splits = cell_splits(cfg, cell)
        spec = cfg.model.build(cfg.corpus.image_size)
        model = run_mode(Mode(cell.mode), splits, spec, cfg.meta.build(cell.seed))
        reports = evaluate(model, splits)
        record.update(reports["weighted"].as_dict())
        record["macro"] = reports["macro"].as_dict()
        if out is not None:
            ckpt = out / "checkpoints" / f"{cell.tag}.ckpt"
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            header = {"mode": cell.mode, "task_labels": sorted(model.class_map), "seed": cell.seed,
                      "experiment": cell.experiment.name, "budget": cell.budget, "cfg": json.loads(cfg.canonical_json())}
            save_checkpoint(model, ckpt, header)
            record["checkpoint"] = str(ckpt.relative_to(out))
            hist = out / "histories" / f"{cell.tag}.csv"
            hist.parent.mkdir(exist_ok=True)
            hist.write_text(history_csv(model.history))
            if save_corpora:
                save_corpus(splits, out / "corpora" / f"{cell.experiment.name}_b{cell.budget}_s{cell.seed}")
    except Exception as exc:  # a failed cell is recorded; the run continues
        log.error("cell %s failed: %s", cell.tag, exc)
        record.update({m: None for m in METRICS})
        record["status"] = "failed"
        record["error"] = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    record["wall_seconds"] = round(time.perf_counter() - start, 3)
    return record


def _run_cell_args(args):
    return run_cell(*args)


def run_experiments(cfg: Config, out: Path | None = None, threads: int = 1,
                    save_corpora: bool = False, cells: list[Cell] | None = None) -> list[dict]:
    """Run every cell; results come back in cell order regardless of ``threads``."""
    cells = enumerate_cells(cfg) if cells is None else cells
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, c, out, save_corpora) for c in cells]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_cell_args, jobs))
    else:
        records = [run_cell(*job) for job in jobs]
    if out is not None:
        write_reports(cfg, records, out)
    return records


def write_reports(cfg: Config, records: list[dict], out: Path) -> None:
    modes = list(cfg.run.modes)
    (out / "runs.csv").write_text(runs_csv(records))
    (out / "table1.csv").write_text(table_csv(records, modes))
    macro = [{**r, **(r.get("macro") or {m: None for m in METRICS})} for r in records]
    (out / "runs_macro.csv").write_text(runs_csv(macro))
    (out / "table1_macro.csv").write_text(table_csv(macro, modes))
    with open(out / "records.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_gallery(out: Path, seed: int = 0, size: int = 64, frames: int = 16) -> list[tuple[Path, Path]]:
    """One clean / degraded PGM pair per class from a fixed-seed phantom."""
    out.mkdir(parents=True, exist_ok=True)
    stack = generate_phantom(seed, size, frames)
    params = ArtefactParams(translation_px=4, sine_period=10.0, sine_duty=0.45, gibbs_keep_fraction=0.3,
                            aliasing_factor=2, rng_seed=seed)
    pairs = []
    for cls in CLASS_ORDER:
        clean = pgm.quantize(stack[0])
        degraded = pgm.quantize(synthesize_sample(stack, cls, params))
        pair = (out / f"{cls.value}_clean.pgm", out / f"{cls.value}_degraded.pgm")
        pgm.write_pgm(pair[0], clean)
        pgm.write_pgm(pair[1], degraded)
        pairs.append(pair)
    return pairs


def write_class_corpus(cfg: CorpusConfig, out: Path) -> dict[str, int]:
    """The raw five-class corpus, one directory per class, before any split."""
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    with open(out / "manifest.jsonl", "w") as fh:
        for cls in CLASS_ORDER:
            folder = out / cls.value
            folder.mkdir(exist_ok=True)
            images = synthesize_class(cfg, cls)
            for i, img in enumerate(images):
                sid = sample_id(cls, i)
                pgm.write_pgm(folder / f"{sid}.pgm", img)
                fh.write(json.dumps({"sample_id": sid, "file": f"{cls.value}/{sid}.pgm",
                                     "class_name": cls.value}, sort_keys=True) + "\n")
            counts[cls.value] = len(images)
    return counts


def class_counts(splits: DatasetSplits) -> dict[str, int]:
    """Per-class sample counts over all three splits (evaluation-side helper)."""
    names = splits.code_names()
    counts = {c.value: 0 for c in CLASS_ORDER if c.value in splits.class_codes}
    for s in list(splits.artefact_specific) + list(splits.unseen_labelled):
        counts[names[s.label]] += 1
    for name in splits.hidden.class_names().values():
        counts[name] += 1
    return counts


__all__ = ["Cell", "EvaluationError", "class_counts", "enumerate_cells", "evaluate", "run_cell",
           "run_experiments", "write_class_corpus", "write_gallery", "write_reports"]
