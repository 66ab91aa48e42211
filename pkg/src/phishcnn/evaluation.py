"""Confusion matrices, accuracy/precision/recall/F1 and cross-validation summaries.

The positive class is Phishing (label 1) throughout. Recall on that class is
what is usually called the phishing detection rate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

RECORD_FIELDS = ["model", "fold", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1",
                 "train_seconds", "test_seconds", "loss", "seed"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> ConfusionMatrix:
        """The same matrix with Legitimate taken as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


def confusion(predictions, labels) -> ConfusionMatrix:
    predictions = np.asarray(predictions).astype(int)
    labels = np.asarray(labels).astype(int)
    if predictions.shape != labels.shape:
        raise ValueError(f"predictions ({predictions.shape}) and labels ({labels.shape}) differ in length")
    if not np.isin(labels, (0, 1)).all() or not np.isin(predictions, (0, 1)).all():
        raise ValueError("predictions and labels must be binary (1 = phishing)")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    return ConfusionMatrix(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: ConfusionMatrix
    model: str = ""
    fold: int | None = None
    degenerate: tuple[str, ...] = ()
    train_seconds: float = 0.0
    test_seconds: float = 0.0
    loss: float | None = None
    seed: int | None = None

    @property
    def detection_rate(self) -> float:
        return self.recall

    def record(self) -> dict:
        cm = self.confusion
        return {"model": self.model, "fold": self.fold, "tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn,
                "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "train_seconds": self.train_seconds, "test_seconds": self.test_seconds,
                "loss": self.loss, "seed": self.seed}


def compute_metrics(cm: ConfusionMatrix, model: str = "", fold: int | None = None, **extra) -> MetricsReport:
    """Accuracy, precision, recall and F1 of ``cm``; 0/0 ratios become 0 and are flagged."""
    if cm.total == 0:
        raise ValueError("cannot compute metrics of an empty confusion matrix")
    flags = []
    accuracy = (cm.tp + cm.tn) / cm.total
    precision, bad = _ratio(cm.tp, cm.tp + cm.fp)
    if bad:
        flags.append("precision")
    recall, bad = _ratio(cm.tp, cm.tp + cm.fn)
    if bad:
        flags.append("recall")
    f1, bad = _ratio(2 * recall * precision, recall + precision)
    if bad:
        flags.append("f1")
    return MetricsReport(accuracy, precision, recall, f1, cm, model, fold, tuple(flags), **extra)


@dataclass
class CVSummary:
    model: str
    folds: list[MetricsReport]
    accuracy: float
    precision: float
    recall: float
    f1: float
    train_seconds: float
    test_seconds: float
    loss: float | None
    pooled: MetricsReport
    plan_digest: str | None = None
    extra: dict = field(default_factory=dict)

    def record(self) -> dict:
        cm = self.pooled.confusion
        return {"model": self.model, "fold": "mean", "tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn,
                "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1,
                "train_seconds": self.train_seconds, "test_seconds": self.test_seconds, "loss": self.loss,
                "seed": self.folds[0].seed if self.folds else None}

    def line(self) -> str:
        return (f"{self.model}: accuracy={self.accuracy:.3f} precision={self.precision:.3f} "
                f"recall={self.recall:.3f} f1={self.f1:.3f}")


def aggregate_cv(reports: list[MetricsReport], k: int | None = None, plan_digest: str | None = None) -> CVSummary:
    """Mean of every metric over the folds (the headline) plus the pooled matrix."""
    if not reports:
        raise ValueError("no fold reports to aggregate")
    ids = [r.fold for r in reports]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate fold ids in {ids}")
    if k is not None and len(reports) != k:
        raise ValueError(f"expected {k} fold reports, got {len(reports)}")
    reports = sorted(reports, key=lambda r: r.fold)

    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in reports]))

    losses = [r.loss for r in reports if r.loss is not None]
    pooled_cm = ConfusionMatrix(*(sum(getattr(r.confusion, a) for r in reports) for a in ("tp", "fp", "tn", "fn")))
    return CVSummary(
        model=reports[0].model, folds=reports,
        accuracy=mean("accuracy"), precision=mean("precision"), recall=mean("recall"), f1=mean("f1"),
        train_seconds=mean("train_seconds"), test_seconds=mean("test_seconds"),
        loss=float(np.mean(losses)) if len(losses) == len(reports) else None,
        pooled=compute_metrics(pooled_cm, reports[0].model, None),
        plan_digest=plan_digest,
    )


@dataclass
class ComparisonTable:
    rows: list[dict]
    plan_digest: str | None

    def render(self) -> str:
        out = [f"{'Model':<24s}{'ACC':>8s}{'Prec.':>8s}{'Rec.':>8s}{'F1':>8s}{'F1 rank':>9s}"]
        for r in self.rows:
            if r.get("note"):
                out.append(f"{r['model']:<24s}  {r['note']}")
                continue
            out.append(f"{r['model']:<24s}{r['accuracy']:8.3f}{r['precision']:8.3f}{r['recall']:8.3f}"
                       f"{r['f1']:8.3f}{r['f1_rank']:9d}")
        if self.plan_digest:
            out.append(f"all rows evaluated on fold plan {self.plan_digest}")
        return "\n".join(out)


def comparison_report(summaries: list[CVSummary], notes: dict[str, str] | None = None) -> ComparisonTable:
    """One row per model with its mean metrics and its F1 rank (1 = best)."""
    digests = {s.plan_digest for s in summaries}
    if len(digests) > 1:
        raise ValueError(f"summaries come from different fold plans: {sorted(map(str, digests))}")
    order = sorted(range(len(summaries)), key=lambda i: -summaries[i].f1)
    ranks = {i: r + 1 for r, i in enumerate(order)}
    rows = [{"model": s.model, "accuracy": s.accuracy, "precision": s.precision, "recall": s.recall,
             "f1": s.f1, "f1_rank": ranks[i]} for i, s in enumerate(summaries)]
    for model, note in (notes or {}).items():
        rows.append({"model": model, "note": note})
    return ComparisonTable(rows, digests.pop() if digests else None)


def records_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RECORD_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: ("" if rec.get(k) is None else rec.get(k)) for k in RECORD_FIELDS})
    return buf.getvalue()
