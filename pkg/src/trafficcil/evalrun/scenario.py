"""Scenario orchestration: seeded runs of base training plus incremental episodes."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ..cilcore import (
    STRATEGIES,
    UPDATERS,
    Learner,
    build_memory,
    compute_centroids,
    preallocate_head,
    train_upperbound,
    train_upperbound_herded,
)
from ..dataio import FlowDataset
from ..features import NormStats, dataset_arrays, fit_normalizer
from ..neural import TrainConfig
from .metrics import confusion_matrix, macro_f1

log = logging.getLogger(__name__)

FULL_MEMORY = "full"


@dataclass(frozen=True)
class ScenarioConfig:
    strategy: str
    base_classes: int
    episodes: tuple[int, ...] = (2,)
    runs: int = 10
    memory: int | str = 1000
    seed: int = 0
    train_fraction: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)
    update_weight_decay: float = 1e-5
    # iCarl head size; defaults to base + 2 * total increment
    preallocate: int | None = None
    # train in 64-bit floats instead of 32-bit
    f64: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "episodes", tuple(int(e) for e in self.episodes))

    @property
    def class_counts(self) -> list[int]:
        counts = [self.base_classes]
        for inc in self.episodes:
            counts.append(counts[-1] + inc)
        return counts

    @property
    def n_needed(self) -> int:
        return self.class_counts[-1]

    @property
    def head_units(self) -> int:
        return self.preallocate or self.base_classes + 2 * sum(self.episodes)

    @property
    def dtype(self):
        return np.float64 if self.f64 else np.float32

    def validate(self, n_available: int | None = None) -> list[str]:
        """All problems with this configuration (empty when valid)."""
        errors = []
        if self.strategy not in STRATEGIES:
            errors.append(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.base_classes < 2:
            errors.append(f"base_classes must be >= 2, got {self.base_classes}")
        if any(e < 1 for e in self.episodes):
            errors.append(f"episode increments must be >= 1, got {list(self.episodes)}")
        if self.runs < 1:
            errors.append(f"runs must be >= 1, got {self.runs}")
        if not 0 < self.train_fraction < 1:
            errors.append(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.memory != FULL_MEMORY and (not isinstance(self.memory, int) or self.memory < self.n_needed):
            errors.append(
                f"memory must be {FULL_MEMORY!r} or an integer >= {self.n_needed} classes, got {self.memory!r}"
            )
        if self.strategy == "icarl" and self.episodes and self.head_units < self.n_needed:
            errors.append(f"preallocate={self.head_units} cannot hold {self.n_needed} classes")
        if n_available is not None and self.n_needed > n_available:
            errors.append(f"scenario needs {self.n_needed} classes, dataset has {n_available}")
        return errors

    def check(self, n_available: int | None = None) -> None:
        errors = self.validate(n_available)
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class RunData:
    run: int
    classes: list[str]  # original labels, in scenario id order
    stats: NormStats
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    train_cfg: TrainConfig

    def train_subset(self, lo: int, hi: int):
        m = (self.y_train >= lo) & (self.y_train < hi)
        return self.x_train[m], self.y_train[m]

    def test_subset(self, hi: int):
        m = self.y_test < hi
        return self.x_test[m], self.y_test[m]


def stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator):
    """Per-class shuffled split; every class with >= 2 samples lands on both sides."""
    train, test = [], []
    for c in np.unique(y):
        rows = rng.permutation(np.flatnonzero(y == c))
        n_train = int(round(fraction * len(rows)))
        if len(rows) >= 2:
            n_train = min(max(n_train, 1), len(rows) - 1)
        train.append(rows[:n_train])
        test.append(rows[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def prepare_run(cfg: ScenarioConfig, ds: FlowDataset, run: int) -> RunData:
    """Seeded class permutation, stratified split and train-only normalization."""
    rng = np.random.default_rng((cfg.seed, run))
    perm = rng.permutation(ds.n_classes)[: cfg.n_needed]
    remap = np.full(ds.n_classes, -1, dtype=np.int64)
    remap[perm] = np.arange(len(perm))
    y_all = remap[ds.targets()]
    keep = np.flatnonzero(y_all >= 0)
    y = y_all[keep]
    tr, te = stratified_split(y, cfg.train_fraction, rng)
    train_ds = ds.subset(keep[tr])
    stats = fit_normalizer(train_ds)
    x, _ = dataset_arrays(ds.subset(keep), stats)
    train_seed = int(rng.integers(0, 2**62))
    return RunData(
        run, [ds.labels[i] for i in perm], stats,
        x[tr], y[tr], x[te], y[te], replace(cfg.train, seed=train_seed),
    )


def _digest(*arrays) -> str:
    h = hashlib.blake2b(digest_size=16)
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class ModelCache:
    """Memo of trained reference models; results are identical with or without it."""

    def __init__(self):
        self._store: dict = {}

    def __len__(self) -> int:
        return len(self._store)

    def get(self, key, build):
        if key not in self._store:
            t0 = time.perf_counter()
            value = build()
            self._store[key] = (value, time.perf_counter() - t0)
        return self._store[key]


@dataclass
class EpisodeResult:
    run: int
    episode: int
    n_classes: int
    f1_all: float
    f1_base: float
    f1_new: float
    ub_f1_all: float
    ub_f1_base: float
    ub_f1_new: float
    seconds: float
    ub_seconds: float
    memory_total: int
    confusion: np.ndarray = field(repr=False)

    METRICS = ("f1_all", "f1_base", "f1_new", "ub_f1_all", "ub_f1_base", "ub_f1_new", "seconds", "ub_seconds")


@dataclass
class ScenarioReport:
    config: ScenarioConfig
    permutations: list[list[str]]
    results: list[EpisodeResult]
    memory_budget: list[int]

    def episodes(self) -> list[int]:
        return sorted({r.episode for r in self.results})

    def mean(self, metric: str, episode: int) -> float:
        vals = [getattr(r, metric) for r in self.results if r.episode == episode]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else math.nan

    def drop(self, subset: str, episode: int) -> float:
        """Mean upperbound F1 minus mean strategy F1 over runs; subset in all/base/new."""
        return self.mean(f"ub_f1_{subset}", episode) - self.mean(f"f1_{subset}", episode)

    def summary(self) -> list[dict]:
        out = []
        for e in self.episodes():
            row = {"episode": e, "n_classes": self.config.class_counts[e]}
            for m in EpisodeResult.METRICS:
                row[m] = self.mean(m, e)
            for s in ("all", "base", "new"):
                row[f"drop_{s}"] = self.drop(s, e)
            out.append(row)
        return out

    def long_rows(self):
        for r in self.results:
            for m in EpisodeResult.METRICS:
                yield (r.run, r.episode, m, getattr(r, m))

    def write(self, outdir, prefix: str = "") -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{prefix}metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "episode", "metric", "value"])
            w.writerows(self.long_rows())
        cfg = asdict(self.config)
        summary = {
            "config": cfg,
            "episodes": _jsonable(self.summary()),
            "class_permutations": self.permutations,
            "memory_budget": self.memory_budget,
        }
        (out / f"{prefix}summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        for r in self.results:
            np.savetxt(
                out / f"{prefix}confusion_run{r.run}_ep{r.episode}.csv",
                r.confusion, fmt="%d", delimiter=",",
            )


def _jsonable(rows):
    return [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()} for row in rows]


def _evaluate(learner: Learner, x, y, n_classes: int, n_base: int):
    cm = confusion_matrix(learner.predict(x), y, n_classes)
    new = macro_f1(cm, range(n_base, n_classes)) if n_classes > n_base else math.nan
    return cm, macro_f1(cm), macro_f1(cm, range(n_base)), new


def _resolve_budget(cfg: ScenarioConfig, rd: RunData) -> int:
    return len(rd.y_train) if cfg.memory == FULL_MEMORY else int(cfg.memory)


def upperbound_model(rd: RunData, k: int, cache: ModelCache, dtype=np.float32):
    """Softmax model trained from scratch on classes ``0..k-1`` of a run; memoized."""
    x, y = rd.train_subset(0, k)
    key = ("upperbound", _digest(x, y), k, rd.train_cfg, np.dtype(dtype).str)
    return cache.get(key, lambda: train_upperbound(x, y, k, rd.train_cfg, dtype=dtype)[0])


def _herded(rd: RunData, k: int, budget: int, cache: ModelCache, dtype=np.float32):
    x, y = rd.train_subset(0, k)
    key = ("upperbound_herded", _digest(x, y), k, budget, rd.train_cfg, np.dtype(dtype).str)

    def build():
        # the full-data upperbound is the same model herding would train first
        reference, _ = upperbound_model(rd, k, cache, dtype)
        return train_upperbound_herded(
            x, y, k, budget, rd.train_cfg, dtype=dtype, reference=reference
        )[0]

    return cache.get(key, build)


def _icarl_base(cfg: ScenarioConfig, rd: RunData, budget: int, cache: ModelCache):
    b = cfg.base_classes
    x, y = rd.train_subset(0, b)

    def build():
        learner, _ = train_upperbound(x, y, b, rd.train_cfg, "sigmoid", dtype=cfg.dtype)
        net, _ = preallocate_head(learner.net, cfg.head_units, x, y, rd.train_cfg)
        mem = build_memory(net, x, y, budget, b)
        return Learner(net, "nmc", compute_centroids(mem, net)), mem

    key = ("icarl_base", _digest(x, y), b, cfg.head_units, budget, rd.train_cfg, np.dtype(cfg.dtype).str)
    return cache.get(key, build)


def run_scenario(
    cfg: ScenarioConfig,
    ds: FlowDataset,
    cache: ModelCache | None = None,
    *,
    final_only: bool = False,
    evaluate: Sequence[int] | None = None,
) -> ScenarioReport:
    """Run ``cfg.runs`` seeded repetitions and collect per-episode metrics.

    Drops are measured against an upperbound trained from scratch on the
    classes known at each episode. ``final_only`` evaluates the last
    episode only and ``evaluate`` names the episodes to score (0 is the
    base model); skipped episodes are still trained for incremental
    strategies.
    """
    cfg.check(ds.n_classes)
    cache = cache if cache is not None else ModelCache()
    counts = cfg.class_counts
    b = cfg.base_classes
    if evaluate is not None:
        eval_eps = sorted(set(int(e) for e in evaluate))
        if not eval_eps or eval_eps[0] < 0 or eval_eps[-1] >= len(counts):
            raise ValueError(f"episodes to evaluate must lie in [0, {len(counts) - 1}], got {list(evaluate)}")
    elif final_only:
        eval_eps = [len(counts) - 1]
    else:
        eval_eps = list(range(len(counts)))
    results, perms, budgets = [], [], []
    for run in range(cfg.runs):
        rd = prepare_run(cfg, ds, run)
        budget = _resolve_budget(cfg, rd)
        perms.append(rd.classes)
        budgets.append(budget)
        log.info("run %d/%d strategy=%s classes=%s", run + 1, cfg.runs, cfg.strategy, counts)

        def record(e, learner, seconds, mem_total):
            k = counts[e]
            ub, ub_secs = upperbound_model(rd, k, cache, cfg.dtype)
            xt, yt = rd.test_subset(k)
            cm, f_all, f_base, f_new = _evaluate(learner, xt, yt, k, b)
            _, u_all, u_base, u_new = _evaluate(ub, xt, yt, k, b)
            results.append(EpisodeResult(
                run, e, k, f_all, f_base, f_new, u_all, u_base, u_new,
                seconds, ub_secs, mem_total, cm,
            ))

        if cfg.strategy in ("upperbound", "upperbound_herded"):
            for e in eval_eps:
                if cfg.strategy == "upperbound":
                    learner, secs = upperbound_model(rd, counts[e], cache, cfg.dtype)
                    total = 0
                else:
                    learner, secs = _herded(rd, counts[e], budget, cache, cfg.dtype)
                    total = min(budget, int((rd.y_train < counts[e]).sum()))
                record(e, learner, secs, total)
            continue

        if cfg.strategy == "icarl":
            (learner, mem), secs = _icarl_base(cfg, rd, budget, cache)
        else:
            learner, secs = upperbound_model(rd, b, cache, cfg.dtype)
            x0, y0 = rd.train_subset(0, b)
            mem = build_memory(learner.net, x0, y0, budget, b)
        if 0 in eval_eps:
            record(0, learner, secs, mem.total)
        update = UPDATERS[cfg.strategy]
        for e in range(1, len(counts)):
            nx, ny = rd.train_subset(counts[e - 1], counts[e])
            learner, mem, rep = update(
                learner, mem, nx, ny, rd.train_cfg, weight_decay=cfg.update_weight_decay
            )
            if e in eval_eps:
                record(e, learner, rep.seconds, mem.total)
    return ScenarioReport(cfg, perms, results, budgets)


# ---------------------------------------------------------------------------


@dataclass
class MemorySweepReport:
    rows: list[dict]

    def write(self, outdir) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        keys = list(self.rows[0]) if self.rows else []
        with open(out / "memory_sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            w.writerows(self.rows)
        (out / "memory_sweep.json").write_text(json.dumps(_jsonable(self.rows), indent=2) + "\n")


def memory_sweep(
    template: ScenarioConfig,
    sizes: Sequence[int | str],
    ds: FlowDataset,
    cache: ModelCache | None = None,
) -> MemorySweepReport:
    """Single-update scenario per memory size, plus herded-upperbound references."""
    cache = cache if cache is not None else ModelCache()
    n = template.n_needed
    for s in sizes:
        if s != FULL_MEMORY and (not isinstance(s, int) or s < n):
            raise ValueError(f"memory size {s!r} smaller than the {n} classes in the scenario")
    rows = []
    last = len(template.class_counts) - 1
    for s in sizes:
        rep = run_scenario(replace(template, memory=s), ds, cache, final_only=True)
        herd = run_scenario(replace(template, memory=s, strategy="upperbound_herded"), ds, cache, final_only=True)
        rows.append({
            "memory": s,
            "resolved_budget": int(np.mean(rep.memory_budget)),
            "strategy": template.strategy,
            "drop_base": rep.drop("base", last),
            "drop_new": rep.drop("new", last),
            "drop_all": rep.drop("all", last),
            "herded_drop_base": herd.drop("base", last),
            "herded_drop_new": herd.drop("new", last),
            "herded_drop_all": herd.drop("all", last),
            "ub_f1_all": rep.mean("ub_f1_all", last),
            "herded_f1_all": herd.mean("f1_all", last),
        })
    return MemorySweepReport(rows)
