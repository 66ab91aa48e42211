"""Cross-validation runs for the CNN variants and the baselines.

Random streams for one experiment all hang off ``RngStream(seed)``:

    derive(0)                     fold assignment
    derive(1, fold)               the per-fold 10% validation split
    derive(2, fold, config_index) network init, dropout and shuffling
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineSpec, predict_many, train_baseline
from .data import Dataset, FoldPlan, holdout_split, stratified_kfold
from .evaluation import CVSummary, MetricsReport, aggregate_cv, compute_metrics, confusion
from .model import ModelConfig
from .nn.rng import RngStream
from .training import EpochRecord, TrainingConfig, evaluate_split, train

log = logging.getLogger(__name__)

FOLD_STREAM, HOLDOUT_STREAM, TRAIN_STREAM = 0, 1, 2
VALIDATION_FRACTION = 0.1


class LeakageError(AssertionError):
    """A test-fold sample reached training or validation."""


def make_fold_plan(dataset: Dataset, k: int = 10, seed: int = 42) -> FoldPlan:
    return stratified_kfold(dataset, k, RngStream(seed).derive(FOLD_STREAM))


def _check_disjoint(*parts: Dataset) -> None:
    seen: set[int] = set()
    for part in parts:
        ids = set(part.source_index.tolist())
        if seen & ids:
            raise LeakageError(f"{len(seen & ids)} samples shared between train/validation/test parts")
        seen |= ids


@dataclass
class FoldOutcome:
    """Everything one CNN fold produced, small enough to pass between processes."""

    fold: int
    report: MetricsReport
    history: list[EpochRecord]
    stopped_epoch: int
    best_epoch: int
    restored_val_loss: float

    @property
    def best_record(self) -> EpochRecord:
        return self.history[self.best_epoch - 1]


def run_cnn_fold(dataset: Dataset, plan: FoldPlan, fold: int, config: ModelConfig,
                 tconfig: TrainingConfig, config_index: int = 0) -> FoldOutcome:
    master = RngStream(tconfig.seed)
    rest = dataset.subset(plan.train_indices(fold))
    test = dataset.subset(plan.test_indices(fold))
    train_part, val_part = holdout_split(rest, VALIDATION_FRACTION, master.derive(HOLDOUT_STREAM, fold))
    _check_disjoint(train_part, val_part, test)

    model = train(config, train_part, val_part, tconfig, master.derive(TRAIN_STREAM, fold, config_index))
    restored = evaluate_split(model.network, val_part)
    result = evaluate_split(model, test)
    cm = confusion(result.predictions, result.labels)
    report = compute_metrics(cm, config.slug, fold, train_seconds=model.train_seconds,
                             test_seconds=result.seconds, loss=result.loss, seed=tconfig.seed)
    log.info("%s fold %d: acc %.4f f1 %.4f (stopped %d, best %d)", config.slug, fold, report.accuracy,
             report.f1, model.stopped_epoch, model.best_epoch)
    return FoldOutcome(fold, report, model.history, model.stopped_epoch, model.best_epoch, restored.loss)


@dataclass
class CVResult:
    name: str
    summary: CVSummary
    folds: list[FoldOutcome] = field(default_factory=list)
    config: ModelConfig | BaselineSpec | None = None

    def records(self) -> list[dict]:
        return [r.record() for r in self.summary.folds] + [self.summary.record()]


def _map(fn, jobs: list[tuple], n_workers: int) -> list:
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(*args) for args in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(fn, *args) for args in jobs]
        return [f.result() for f in futures]


def run_cnn_grid(dataset: Dataset, plan: FoldPlan, configs: list[ModelConfig], tconfig: TrainingConfig,
                 jobs: int = 1) -> list[CVResult]:
    """k-fold CV of every config on one fold plan.

    All (config, fold) trainings are independent and may run in parallel;
    outcomes are merged by their (config, fold) key so the result does not
    depend on completion order.
    """
    keys = [(ci, fold) for ci in range(len(configs)) for fold in range(plan.k)]
    outcomes = _map(run_cnn_fold, [(dataset, plan, fold, configs[ci], tconfig, ci) for ci, fold in keys], jobs)
    merged = dict(zip(keys, outcomes))
    results = []
    for ci, config in enumerate(configs):
        folds = [merged[ci, fold] for fold in range(plan.k)]
        summary = aggregate_cv([f.report for f in folds], plan.k, plan.digest())
        results.append(CVResult(config.slug, summary, folds, config))
    return results


def run_cnn_cv(dataset: Dataset, plan: FoldPlan, config: ModelConfig, tconfig: TrainingConfig,
               jobs: int = 1) -> CVResult:
    return run_cnn_grid(dataset, plan, [config], tconfig, jobs)[0]


def run_baseline_fold(dataset: Dataset, plan: FoldPlan, fold: int, spec: BaselineSpec) -> MetricsReport:
    train_part = dataset.subset(plan.train_indices(fold))
    test = dataset.subset(plan.test_indices(fold))
    _check_disjoint(train_part, test)
    t0 = time.perf_counter()
    model = train_baseline(spec, train_part)
    train_seconds = time.perf_counter() - t0
    t0 = time.perf_counter()
    predictions = predict_many(model, test.features.astype(np.int64))
    test_seconds = time.perf_counter() - t0
    cm = confusion(predictions, test.require_labels())
    return compute_metrics(cm, spec.kind, fold, train_seconds=train_seconds, test_seconds=test_seconds,
                           seed=spec.seed)


def run_baseline_cv(dataset: Dataset, plan: FoldPlan, specs: list[BaselineSpec], jobs: int = 1) -> list[CVResult]:
    keys = [(si, fold) for si in range(len(specs)) for fold in range(plan.k)]
    reports = dict(zip(keys, _map(run_baseline_fold, [(dataset, plan, fold, specs[si]) for si, fold in keys],
                                  jobs)))
    out = []
    for si, spec in enumerate(specs):
        summary = aggregate_cv([reports[si, fold] for fold in range(plan.k)], plan.k, plan.digest())
        out.append(CVResult(spec.kind, summary, config=spec))
    return out
