"""Command-line front end.

Subcommands: ``synth``, ``ingest``, ``train``, ``update``, ``eval``,
``experiment`` and ``stats``. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import __version__
from .binfmt import FormatError
from .cilcore import (
    STRATEGY_ACTIVATION,
    UPDATERS,
    Learner,
    build_memory,
    compute_centroids,
    load_memory,
    preallocate_head,
    save_memory,
    train_upperbound,
)
from .dataio import DatasetError, SpecError, SyntheticSpec, generate_synthetic, load_jsonl, merge_labels
from .evalrun import ModelCache, confusion_matrix, heatmap_stats, macro_f1, memory_sweep, per_class_f1, run_scenario
from .expfile import check_plan, load_experiment
from .features import dataset_arrays, fit_normalizer
from .neural import TrainConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("trafficcil")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flags, configuration or incompatible inputs (exit 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_train_flags(p: argparse.ArgumentParser, epochs_default=None) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=epochs_default or d.epochs,
                   help=f"training epochs (default {epochs_default or d.epochs})")
    g.add_argument("--lr", type=float, default=d.lr0, help=f"initial learning rate (default {d.lr0})")
    g.add_argument("--lr-halving", type=int, default=d.lr_halving_period,
                   help=f"epochs between learning-rate halvings (default {d.lr_halving_period})")
    g.add_argument("--momentum", type=float, default=d.momentum, help=f"SGD momentum (default {d.momentum})")
    g.add_argument("--weight-decay", type=float, default=None,
                   help="L2 coefficient (default 0 for training, 1e-5 for updates)")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help=f"minibatch size (default {d.batch_size})")
    g.add_argument("--seed", type=int, default=0, help="training seed (default 0)")


def _train_config(args, weight_decay_default: float) -> TrainConfig:
    seed = args.seed_override if args.seed_override is not None else args.seed
    wd = weight_decay_default if args.weight_decay is None else args.weight_decay
    try:
        return TrainConfig(args.epochs, args.lr, args.lr_halving, args.momentum, wd, args.batch_size, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trafficcil", description="Class-incremental traffic classification toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--seed-override", type=int, default=None,
                   help="replace every declared seed (spec, experiment, training)")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    p.add_argument("--f64", action="store_true", help="train and evaluate in 64-bit floats")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset from a spec file")
    s.add_argument("spec", help="YAML/JSON synthetic spec (n_classes, flows_per_class, seed[, classes])")
    s.add_argument("out", help="output JSON-lines path")

    s = sub.add_parser("ingest", help="validate a JSON-lines export and report its statistics")
    s.add_argument("dataset")
    s.add_argument("--out", help="write the filtered records here")
    s.add_argument("--report", help="write ingestion statistics as JSON here")

    s = sub.add_parser("train", help="train a model from scratch")
    s.add_argument("dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--head", choices=("softmax", "sigmoid", "nmc-readout"), default="softmax",
                   help="output design (default softmax)")
    s.add_argument("--preallocate", type=int, default=None,
                   help="grow a sigmoid head to K units with a fake update (needed before iCarl updates)")
    s.add_argument("--memory", type=int, default=1000, help="exemplar memory size (default 1000)")
    _add_train_flags(s)

    s = sub.add_parser("update", help="add new classes to a trained model")
    s.add_argument("dataset", help="JSON-lines file holding the new classes only")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--memory-file", required=True)
    s.add_argument("--strategy", choices=sorted(UPDATERS), required=True)
    s.add_argument("--out", required=True, help="output directory")
    _add_train_flags(s)

    s = sub.add_parser("eval", help="score a checkpoint on a labelled dataset")
    s.add_argument("dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--memory-file", help="required for nearest-mean checkpoints")
    s.add_argument("--confusion", help="write the confusion matrix as CSV here")

    s = sub.add_parser("experiment", help="run an experiment file (or bundled: paper-grid, episodes, memory-sweep)")
    s.add_argument("file")
    s.add_argument("--out", help="output directory (overrides the file's 'output')")
    s.add_argument("--dataset", help="use this JSON-lines dataset instead of the file's")
    s.add_argument("--dry-run", action="store_true", help="print the resolved plan and exit")

    s = sub.add_parser("stats", help="per-class, per-position heatmap statistics as CSV")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--unsorted", action="store_true", help="keep dataset class order")
    return p


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        data = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read spec {args.spec}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"invalid spec file: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("spec file must be a mapping")
    if args.seed_override is not None:
        data = {**data, "seed": args.seed_override}
    ds = generate_synthetic(SyntheticSpec.from_dict(data))
    ds.dump(args.out)
    print(f"wrote {len(ds)} flows over {ds.n_classes} classes to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    ds = load_jsonl(args.dataset)
    report = ds.stats.to_dict()
    text = json.dumps(report, indent=2)
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n")
    if args.out:
        ds.dump(args.out)
    return EXIT_OK


def _dtype(args):
    return np.float64 if args.f64 else np.float32


def _write_history(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows(enumerate(history))


def cmd_train(args) -> int:
    ds = load_jsonl(args.dataset)
    if ds.n_classes < 2:
        raise DatasetError(f"training needs at least 2 classes, found {ds.n_classes}")
    cfg = _train_config(args, 0.0)
    if args.preallocate is not None and args.head == "softmax":
        raise UsageError("--preallocate applies to sigmoid heads (sigmoid or nmc-readout)")
    if args.memory < ds.n_classes:
        raise UsageError(f"--memory {args.memory} is smaller than the {ds.n_classes} classes")
    stats = fit_normalizer(ds)
    x, y = dataset_arrays(ds, stats)
    c = ds.n_classes
    mode = "softmax" if args.head == "softmax" else "sigmoid"
    t0 = time.perf_counter()
    learner, history = train_upperbound(x, y, c, cfg, mode, dtype=_dtype(args))
    net = learner.net
    if args.preallocate is not None:
        try:
            net, fake = preallocate_head(net, args.preallocate, x, y, cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        history = history + fake
    mem = build_memory(net, x, y, args.memory, c)
    seconds = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "labels": ds.labels,
        "classifier": "nmc" if args.head == "nmc-readout" else "head",
        "head_mode": args.head,
        "train": asdict(cfg),
        "history": [f"train:{args.head}"],
    }
    save_checkpoint(net, stats, out / "model.cilf", meta)
    save_memory(mem, out / "memory.cilm")
    _write_history(out / "history.csv", history)
    print(f"train {args.head}: {seconds:.3f} s, {len(x)} samples, {c} classes -> {out / 'model.cilf'}")
    return EXIT_OK


def _learner_from(net, meta, mem):
    if meta.get("classifier") == "nmc":
        if mem is None:
            raise UsageError("this checkpoint classifies by nearest mean; pass --memory-file")
        return Learner(net, "nmc", compute_centroids(mem, net))
    return Learner(net, "head")


def cmd_update(args) -> int:
    net, stats, meta = load_checkpoint(args.checkpoint)
    mem = load_memory(args.memory_file)
    if mem.n_classes != net.active_classes:
        raise UsageError(
            f"memory holds {mem.n_classes} classes but the checkpoint has {net.active_classes}"
        )
    want = STRATEGY_ACTIVATION[args.strategy]
    if net.activation != want:
        raise UsageError(
            f"strategy {args.strategy} needs a {want} head but the checkpoint has a {net.activation} head"
            + ("; train with --head sigmoid/nmc-readout and --preallocate" if want == "sigmoid" else
               "; train with --head softmax")
        )
    labels = list(meta.get("labels") or [])
    if len(labels) != net.active_classes:
        raise FormatError("checkpoint metadata lacks a label list matching its active classes")
    new_ds = load_jsonl(args.dataset)
    known = sorted(set(new_ds.labels) & set(labels))
    if known:
        raise DatasetError(f"update dataset contains already-known classes {known}")
    merged = merge_labels(labels, new_ds.labels)
    x, y_local = dataset_arrays(new_ds, stats)
    y = np.array([merged.index(new_ds.labels[i]) for i in y_local], dtype=np.int64)
    if net.activation == "sigmoid" and net.free_units < len(merged) - len(labels):
        raise UsageError(
            f"insufficient free head units: {net.free_units} free, {len(merged) - len(labels)} new classes"
        )
    cfg = _train_config(args, 1e-5)
    learner = _learner_from(net, meta, mem)
    learner, mem, report = UPDATERS[args.strategy](
        learner, mem, x, y, cfg, weight_decay=cfg.weight_decay
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        **meta,
        "labels": merged,
        "classifier": learner.classifier,
        "history": list(meta.get("history", [])) + [f"update:{args.strategy}:+{report.classes_added}"],
    }
    save_checkpoint(learner.net, stats, out / "model.cilf", meta)
    save_memory(mem, out / "memory.cilm")
    _write_history(out / "history.csv", report.history)
    print(
        f"{args.strategy} update: {report.seconds:.3f} s, +{report.classes_added} classes, "
        f"{report.n_train} samples, memory {mem.total}/{mem.budget}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    net, stats, meta = load_checkpoint(args.checkpoint)
    mem = load_memory(args.memory_file) if args.memory_file else None
    labels = list(meta.get("labels") or [])
    ds = load_jsonl(args.dataset)
    unknown = sorted(set(ds.labels) - set(labels))
    if unknown:
        raise DatasetError(f"dataset has classes the model does not know: {unknown}")
    x, y_local = dataset_arrays(ds, stats)
    y = np.array([labels.index(ds.labels[i]) for i in y_local], dtype=np.int64)
    learner = _learner_from(net, meta, mem)
    cm = confusion_matrix(learner.predict(x), y, len(labels))
    f1 = per_class_f1(cm)
    print(json.dumps({
        "macro_f1": macro_f1(cm),
        "classifier": learner.classifier,
        "per_class_f1": {lab: float(v) for lab, v in zip(labels, f1)},
        "n_samples": int(len(y)),
    }, indent=2))
    if args.confusion:
        np.savetxt(args.confusion, cm, fmt="%d", delimiter=",")
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan, errors = load_experiment(args.file, seed_override=args.seed_override, dataset_override=args.dataset)
    if plan is not None and not errors:
        if plan.dataset_path is not None:
            ds = load_jsonl(plan.dataset_path)
        else:
            ds = generate_synthetic(plan.synthetic)
        errors = check_plan(plan, ds.n_classes)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        raise UsageError(f"{len(errors)} problem(s) in experiment file {args.file}")
    if args.f64:
        plan.scenarios = [replace(s, config=replace(s.config, f64=True)) for s in plan.scenarios]
        plan.sweeps = [replace(s, template=replace(s.template, f64=True)) for s in plan.sweeps]
    if args.dry_run:
        print(json.dumps(plan.describe(), indent=2))
        return EXIT_OK
    out = Path(args.out or plan.output or f"results/{plan.name}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(plan.describe(), indent=2) + "\n")
    cache = ModelCache()
    grid = []
    for s in plan.scenarios:
        log.info("scenario %s", s.label)
        rep = run_scenario(s.config, ds, cache)
        rep.write(out / s.label)
        for row in rep.summary():
            grid.append({"scenario": s.label, "strategy": s.config.strategy,
                         "base_classes": s.config.base_classes, **row})
        print(f"{s.label}: done ({len(rep.results)} run x episode results)")
    if grid:
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(grid[0]))
            w.writeheader()
            w.writerows(grid)
    for s in plan.sweeps:
        log.info("sweep %s", s.label)
        memory_sweep(s.template, s.sizes, ds, cache).write(out / s.label)
        print(f"{s.label}: done ({len(s.sizes)} sizes)")
    print(f"results in {out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = load_jsonl(args.dataset)
    heatmap_stats(ds, fit_normalizer(ds)).write_csv(args.out, sort=not args.unsorted)
    print(f"wrote heatmap statistics for {ds.n_classes} classes to {args.out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "update": cmd_update,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.threads is not None and args.threads < 1:
        print("trafficcil: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, SpecError) as exc:
        print(f"trafficcil: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FormatError, OSError) as exc:
        print(f"trafficcil: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("failure", exc_info=True)
        print(f"trafficcil: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
