"""Command-line entry point: ``phishcnn <command> [flags]``.

Commands: data, crossval, tables, gradcheck, params. Exit codes: 0 success,
2 usage error, 3 data error, 4 numeric failure, 5 failed check or gate.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .baselines import DEFAULT_SPECS, BaselineSpec
from .checks import run_suite
from .data import (REFERENCE_LEGITIMATE, REFERENCE_PHISHING, REFERENCE_TOTAL, DatasetError, file_digest,
                   load_dataset, map_labels, validate)
from .evaluation import comparison_report, records_csv
from .experiments import make_fold_plan, run_baseline_cv, run_cnn_grid
from .model import (PAPER_FC_UNITS, PAPER_FILTERS, PAPER_KERNELS, ConfigError, ModelConfig, count_parameters,
                    format_shape_chain)
from .training import TrainingConfig, TrainingDiverged, export_history, history_filename

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_GATE = 0, 2, 3, 4, 5
DATA_ENV = "PHISHING_DATA"

# best published configuration, used by table 6
BEST_CONFIG = ModelConfig(variant="cnn2", num_filters=64, kernel1=12, kernel2=6, fc_units=32)
OUT_OF_SCOPE = {"BayesNet": "out of scope (structure learning not implemented)"}
BASELINE_ORDER = ("NaiveBayes", "Logistic", "LinearSVM", "RandomForest", "DecisionTree", "RandomTree")
PAPER_TRAINABLE = {("cnn2", 8, 10, 5, 8): 649}

log = logging.getLogger("phishcnn")


class UsageError(Exception):
    pass


class RunManifest:
    """Structured record of one invocation, written as ``manifest.json``."""

    def __init__(self, command: str, argv: list[str], config: dict):
        self.data = {"command": command, "argv": argv, "config": config, "tool_version": __version__,
                     "started": _now(), "finished": None, "outputs": []}
        self.out_dir: Path | None = None

    def add_output(self, path: Path) -> None:
        self.data["outputs"].append(str(path))

    def write(self, out_dir: Path) -> Path:
        self.data["finished"] = _now()
        missing = [p for p in self.data["outputs"] if not Path(p).exists()]
        if missing:
            raise RuntimeError(f"manifest lists missing outputs: {missing}")
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


# --- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("cnn1", "cnn2"), default="cnn2")
    p.add_argument("--filters", type=int, default=64)
    p.add_argument("--k1", type=int, default=10)
    p.add_argument("--k2", type=int, default=None, help="second kernel length (cnn2; default k1 // 2)")
    p.add_argument("--fc", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--no-batchnorm", action="store_true")
    p.add_argument("--paper-grid", action="store_true", help="reject values outside the published grid")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=os.environ.get(DATA_ENV), help=f"corpus path (default ${DATA_ENV})")
    p.add_argument("--format", choices=("arff", "csv"), default=None)
    p.add_argument("--phishing-label", type=int, choices=(-1, 1), default=None,
                   help="raw class value meaning phishing (default: inferred from the reference counts)")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--out", default="runs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phishcnn", description="1D-CNN phishing website classifiers and baselines")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("data", help="load, validate and summarize a corpus")
    p.add_argument("--data", default=os.environ.get(DATA_ENV))
    p.add_argument("--format", choices=("arff", "csv"), default=None)
    p.add_argument("--phishing-label", type=int, choices=(-1, 1), default=None)
    p.add_argument("--no-strict", action="store_true", help="accept counts other than the reference corpus")
    p.add_argument("--out", default=None, help="directory for the validation report")

    p = sub.add_parser("crossval", help="k-fold cross-validation of one CNN configuration")
    _add_model_flags(p)
    _add_run_flags(p)
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("tables", help="reproduce one of the result grids (3, 4, 5 or 6)")
    p.add_argument("table", type=int)
    _add_run_flags(p)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--fc", type=int, default=8, help="FC width for tables 3 to 5")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer's backward pass")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tolerance", type=float, default=None)

    p = sub.add_parser("params", help="parameter counts and shape chain of one configuration")
    _add_model_flags(p)
    return parser


def _model_config(args) -> ModelConfig:
    if args.paper_grid:
        for flag, value, grid in (("--filters", args.filters, PAPER_FILTERS), ("--k1", args.k1, PAPER_KERNELS),
                                  ("--fc", args.fc, PAPER_FC_UNITS)):
            if value not in grid:
                raise UsageError(f"{flag} {value} is not in the published grid {list(grid)}")
    try:
        return ModelConfig(variant=args.model, num_filters=args.filters, kernel1=args.k1, kernel2=args.k2,
                           fc_units=args.fc, dropout_rate=args.dropout, batchnorm=not args.no_batchnorm)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _training_config(args) -> TrainingConfig:
    try:
        return TrainingConfig(max_epochs=args.epochs, patience=args.patience, batch_size=args.batch,
                              seed=args.seed, dtype=args.dtype)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(args):
    if not args.data:
        raise UsageError(f"no corpus given: pass --data or set ${DATA_ENV}")
    dataset = load_dataset(args.data, args.format)
    report = validate(dataset)
    if not report.ok:
        row, number, name, value = report.violations[0]
        raise DatasetError(f"{len(report.violations)} domain violations, first at row {row}: "
                           f"attribute {number} ({name}) value {value}")
    return map_labels(dataset, args.phishing_label), report


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands -------------------------------------------------------------

def cmd_data(args, manifest: RunManifest) -> int:
    if not args.data:
        raise UsageError(f"no corpus given: pass --data or set ${DATA_ENV}")
    dataset = load_dataset(args.data, args.format)
    report = validate(dataset)
    try:
        counts = map_labels(dataset, args.phishing_label).summary()
    except DatasetError as exc:
        if not args.no_strict:
            raise
        print(f"warning: {exc}", file=sys.stderr)
        counts = {"phishing": "?", "legitimate": "?"}
    print(f"{len(dataset)} total, {counts['phishing']} phishing, {counts['legitimate']} legitimate")
    for line in report.lines():
        print(line)
    manifest.data["config"]["dataset_digest"] = file_digest(args.data)
    if args.out:
        out = _out_dir(args.out)
        path = out / "validation.json"
        path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        manifest.add_output(path)
        manifest.write(out)
    if not report.ok:
        return EXIT_DATA
    reference = (len(dataset), counts["phishing"], counts["legitimate"]) == (
        REFERENCE_TOTAL, REFERENCE_PHISHING, REFERENCE_LEGITIMATE)
    if not reference and not args.no_strict:
        print(f"counts differ from the reference corpus ({REFERENCE_TOTAL} total, {REFERENCE_PHISHING} "
              f"phishing, {REFERENCE_LEGITIMATE} legitimate); pass --no-strict to accept", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _write_results(out: Path, results, manifest: RunManifest, seed: int, histories: bool = True) -> None:
    records = [rec for r in results for rec in r.records()]
    path = out / "records.csv"
    path.write_text(records_csv(records), encoding="utf-8")
    manifest.add_output(path)
    if histories:
        for r in results:
            for fold in r.folds:
                hpath = out / history_filename(r.config, fold.fold, seed)
                export_history(fold.history, hpath)
                manifest.add_output(hpath)


def cmd_crossval(args, manifest: RunManifest) -> int:
    config = _model_config(args)
    tconfig = _training_config(args)
    dataset, _ = _load(args)
    plan = make_fold_plan(dataset, args.folds, args.seed)
    manifest.data["config"].update(model=config.to_dict(), training=tconfig.to_dict(),
                                   dataset_digest=file_digest(args.data), fold_plan=plan.digest())
    result = run_cnn_grid(dataset, plan, [config], tconfig, args.jobs)[0]
    out = _out_dir(args.out)
    _write_results(out, [result], manifest, args.seed)
    manifest.write(out)
    print(f"seed {args.seed} {result.summary.line()}")
    return EXIT_OK


def table_configs(table: int, fc: int = 8) -> list[ModelConfig]:
    if table == 3:
        return [ModelConfig("cnn1", f, 10, None, fc) for f in PAPER_FILTERS]
    if table == 4:
        return [ModelConfig("cnn2", f, 10, 5, fc) for f in PAPER_FILTERS]
    if table == 5:
        return [ModelConfig("cnn2", 64, k, k // 2, fc) for k in PAPER_KERNELS]
    if table == 6:
        return [BEST_CONFIG]
    raise UsageError(f"unknown table {table}; choose 3, 4, 5 or 6")


def render_grid(results) -> str:
    """Configurations as columns, metrics and parameter counts as rows."""
    head = f"{'':<14s}" + "".join(f"{r.name:>30s}" for r in results)
    rows = [head]
    metrics = [("Accuracy", "accuracy"), ("Precision", "precision"), ("Recall", "recall"), ("F1", "f1"),
               ("Train time s", "train_seconds"), ("Test time s", "test_seconds"), ("Loss", "loss")]
    for label, attr in metrics:
        rows.append(f"{label:<14s}" + "".join(f"{getattr(r.summary, attr):>30.3f}" for r in results))
    counts = [count_parameters(r.config) for r in results]
    rows.append(f"{'Total params':<14s}" + "".join(f"{c.total:>30d}" for c in counts))
    rows.append(f"{'Trainable':<14s}" + "".join(f"{c.trainable:>30d}" for c in counts))
    rows.append(f"{'Non-trainable':<14s}" + "".join(f"{c.non_trainable:>30d}" for c in counts))
    return "\n".join(rows)


def cmd_tables(args, manifest: RunManifest) -> int:
    configs = table_configs(args.table, args.fc)
    tconfig = _training_config(args)
    dataset, _ = _load(args)
    plan = make_fold_plan(dataset, args.folds, args.seed)
    manifest.data["config"].update(table=args.table, models=[c.to_dict() for c in configs],
                                   training=tconfig.to_dict(), dataset_digest=file_digest(args.data),
                                   fold_plan=plan.digest())
    results = run_cnn_grid(dataset, plan, configs, tconfig, args.jobs)
    out = _out_dir(args.out)
    if args.table == 6:
        specs = [dataclasses.replace(DEFAULT_SPECS[k], seed=args.seed) for k in BASELINE_ORDER]
        manifest.data["config"]["baselines"] = [dataclasses.asdict(s) for s in specs]
        baselines = run_baseline_cv(dataset, plan, specs, args.jobs)
        _write_results(out, results, manifest, args.seed)
        path = out / "baseline_records.csv"
        path.write_text(records_csv([rec for r in baselines for rec in r.records()]), encoding="utf-8")
        manifest.add_output(path)
        text = comparison_report([r.summary for r in results + baselines], OUT_OF_SCOPE).render()
    else:
        _write_results(out, results, manifest, args.seed)
        text = render_grid(results)
    path = out / f"table{args.table}.txt"
    path.write_text(text + "\n", encoding="utf-8")
    manifest.add_output(path)
    manifest.write(out)
    print(text)
    return EXIT_OK


def cmd_gradcheck(args, manifest: RunManifest) -> int:
    reports = run_suite(args.seed, args.tolerance)
    for r in reports:
        print(r.summary())
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} checks passed (seed {args.seed})")
    return EXIT_OK if not failed else EXIT_GATE


def cmd_params(args, manifest: RunManifest) -> int:
    config = _model_config(args)
    count = count_parameters(config)
    print(f"config: {config.slug}")
    print(f"shape chain: {format_shape_chain(config)}")
    print(f"trainable: {count.trainable}")
    print(f"non-trainable: {count.non_trainable}")
    print(f"total: {count.total}")
    key = (config.variant, config.num_filters, config.kernel1, config.kernel2, config.fc_units)
    if key in PAPER_TRAINABLE and PAPER_TRAINABLE[key] != count.trainable:
        print(f"note: the published table lists {PAPER_TRAINABLE[key]} trainable parameters for this "
              f"configuration; the closed-form sum above is {count.trainable} (see README)")
    return EXIT_OK


COMMANDS = {"data": cmd_data, "crossval": cmd_crossval, "tables": cmd_tables, "gradcheck": cmd_gradcheck,
            "params": cmd_params}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    manifest = RunManifest(args.command, argv, {k: v for k, v in vars(args).items() if k != "command"})
    try:
        return COMMANDS[args.command](args, manifest)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
