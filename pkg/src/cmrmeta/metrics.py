"""Confusion matrices, accuracy / precision / recall / F-measure and run aggregation.

Per-class ratios are computed as exact fractions of the integer counts and
only converted to float at the end, so identities such as weighted recall ==
accuracy hold bit-for-bit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

METRICS = ("accuracy", "precision", "recall", "f_measure")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[int, ...]
    counts: np.ndarray  # rows = truth, columns = prediction

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def supports(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision: float
    recall: float
    f_measure: float
    averaging: str
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    zero_division: bool = False

    def as_dict(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def confusion(truth: Sequence[int], pred: Sequence[int], classes: Sequence[int] | None = None) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.shape != pred.shape:
        raise MetricsError("truth and prediction lengths differ")
    if classes is None:
        classes = sorted(set(truth.tolist()) | set(pred.tolist()))
    classes = tuple(int(c) for c in classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth.tolist(), pred.tolist()):
        if t not in index or p not in index:
            raise MetricsError(f"label {t if t not in index else p} not in class set {classes}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes, counts)


def compute_metrics(cm: ConfusionMatrix, averaging: str = "weighted") -> MetricReport:
    """Accuracy plus macro- or support-weighted precision, recall and F-measure.

    A class whose precision or recall has a zero denominator scores 0 for that
    ratio and sets ``zero_division`` on the report.
    """
    if averaging not in ("macro", "weighted"):
        raise MetricsError(f"unknown averaging {averaging!r}")
    total = cm.total
    if total == 0:
        raise MetricsError("confusion matrix is empty")
    counts = cm.counts
    zero_div = False
    per_class: dict[int, dict[str, Fraction]] = {}
    for i, code in enumerate(cm.classes):
        tp = int(counts[i, i])
        predicted = int(counts[:, i].sum())
        actual = int(counts[i, :].sum())
        if predicted == 0 or actual == 0:
            zero_div = True
        p = Fraction(tp, predicted) if predicted else Fraction(0)
        r = Fraction(tp, actual) if actual else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        per_class[code] = {"precision": p, "recall": r, "f_measure": f, "support": actual}
    n = len(cm.classes)
    if averaging == "macro":
        weights = {c: Fraction(1, n) for c in cm.classes}
    else:
        weights = {c: Fraction(per_class[c]["support"], total) for c in cm.classes}
    avg = {m: sum((weights[c] * per_class[c][m] for c in cm.classes), Fraction(0))
           for m in ("precision", "recall", "f_measure")}
    return MetricReport(
        accuracy=float(Fraction(int(np.trace(counts)), total)),
        precision=float(avg["precision"]),
        recall=float(avg["recall"]),
        f_measure=float(avg["f_measure"]),
        averaging=averaging,
        per_class={c: {k: float(v) for k, v in d.items()} for c, d in per_class.items()},
        zero_division=zero_div,
    )


def aggregate_runs(reports: Sequence[MetricReport]) -> dict[str, tuple[float, float]]:
    """Mean and Bessel-corrected standard deviation of each metric.

    Sums are correctly rounded (``math.fsum``) so the result does not depend
    on report order.
    """
    if len(reports) < 2:
        raise MetricsError("aggregation needs at least two reports")
    out = {}
    n = len(reports)
    for m in METRICS:
        values = [getattr(r, m) for r in reports]
        mean = math.fsum(values) / n
        var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
        out[m] = (mean, math.sqrt(var))
    return out


RUN_COLUMNS = ("experiment", "mode", "budget", "seed", *METRICS)


def runs_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RUN_COLUMNS)
    for r in rows:
        writer.writerow([r["experiment"], r["mode"], r["budget"], r["seed"],
                         *(f"{r[m]:.6f}" if r.get(m) is not None else "failed" for m in METRICS)])
    return buf.getvalue()


def table_csv(rows: Sequence[dict], modes: Sequence[str]) -> str:
    """One line per (experiment, budget); mean and across-seed std per metric and mode."""
    groups: dict[tuple[str, int], dict[str, list[MetricReport]]] = {}
    for r in rows:
        if r.get("accuracy") is None:
            continue
        key = (r["experiment"], int(r["budget"]))
        report = MetricReport(r["accuracy"], r["precision"], r["recall"], r["f_measure"], "weighted")
        groups.setdefault(key, {}).setdefault(r["mode"], []).append(report)
    header = ["experiment", "budget"]
    for m in METRICS:
        for mode in modes:
            header += [f"{m}_{mode}_mean", f"{m}_{mode}_std_across_seeds"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for (exp, budget), by_mode in groups.items():
        line = [exp, budget]
        for m in METRICS:
            for mode in modes:
                reps = by_mode.get(mode, [])
                if len(reps) >= 2:
                    mean, std = aggregate_runs(reps)[m]
                    line += [f"{mean:.6f}", f"{std:.6f}"]
                elif len(reps) == 1:
                    line += [f"{getattr(reps[0], m):.6f}", ""]
                else:
                    line += ["", ""]
        writer.writerow(line)
    return buf.getvalue()
