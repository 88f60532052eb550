"""Experiment files: YAML documents describing scenario grids and memory sweeps.

Layout (every key outside this list is rejected)::

    name: my-experiment
    seed: 0                      # required, no wall-clock seeding
    output: results/my-experiment
    dataset:                     # exactly one of path / synthetic
      path: flows.jsonl
      synthetic: {n_classes: 12, flows_per_class: 600, seed: 0}
    train: {epochs: 200, lr0: 0.01, lr_halving_period: 50, momentum: 0.9,
            weight_decay: 0.0, batch_size: 64}
    scenarios:
      - strategy: [icarlplus, fixed_repr]   # scalar or list, lists expand to a grid
        base_classes: [2, 10]                # scalar or list
        episodes: [2]                        # class increments applied in sequence
        runs: 10
        memory: 1000                         # integer or "full"
        train_fraction: 0.8
        update_weight_decay: 1.0e-5
        preallocate: null                    # iCarl head size, default B + 2 * sum(episodes)
        seed: 0                              # defaults to the top-level seed
        train: {...}                         # per-scenario overrides
    sweeps:
      - strategy: icarlplus
        base_classes: 10
        episodes: [2]
        runs: 5
        sizes: [100, 1000, 10000, full]

Relative dataset paths resolve against the experiment file's directory.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import yaml

from .dataio import SpecError, SyntheticSpec
from .evalrun import FULL_MEMORY, ScenarioConfig
from .neural import TrainConfig

TOP_KEYS = {"name", "seed", "output", "dataset", "train", "scenarios", "sweeps"}
DATASET_KEYS = {"path", "synthetic"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
SCENARIO_KEYS = {
    "strategy", "base_classes", "episodes", "runs", "memory", "train_fraction",
    "update_weight_decay", "preallocate", "seed", "train",
}
SWEEP_KEYS = (SCENARIO_KEYS - {"memory"}) | {"sizes"}
BUNDLED = ("paper-grid", "episodes", "memory-sweep")


@dataclass
class ScenarioEntry:
    label: str
    config: ScenarioConfig


@dataclass
class SweepEntry:
    label: str
    template: ScenarioConfig
    sizes: list


@dataclass
class ExperimentPlan:
    name: str
    seed: int
    output: str | None
    dataset_path: Path | None
    synthetic: SyntheticSpec | None
    scenarios: list[ScenarioEntry] = field(default_factory=list)
    sweeps: list[SweepEntry] = field(default_factory=list)

    def describe(self) -> dict:
        def cfg(c: ScenarioConfig) -> dict:
            return {
                "strategy": c.strategy, "base_classes": c.base_classes,
                "episodes": list(c.episodes), "runs": c.runs, "memory": c.memory,
                "seed": c.seed, "class_counts": c.class_counts,
                "train": {k: getattr(c.train, k) for k in sorted(TRAIN_KEYS)},
            }

        return {
            "name": self.name,
            "seed": self.seed,
            "dataset": str(self.dataset_path) if self.dataset_path else
            {"synthetic": {"n_classes": self.synthetic.n_classes,
                           "flows_per_class": self.synthetic.flows_per_class,
                           "seed": self.synthetic.seed}},
            "scenarios": [{"label": s.label, **cfg(s.config)} for s in self.scenarios],
            "sweeps": [{"label": s.label, "sizes": s.sizes, **cfg(s.template)} for s in self.sweeps],
        }


def bundled_path(name: str) -> Path:
    ref = resources.files("trafficcil") / "experiments" / f"{name}.yaml"
    return Path(str(ref))


def resolve_source(arg: str) -> Path:
    """A file path, or the name of a bundled experiment."""
    p = Path(arg)
    if p.exists() or arg not in BUNDLED:
        return p
    return bundled_path(arg)


def _unknown(where: str, data: dict, allowed: set, errors: list) -> None:
    extra = sorted(set(data) - allowed)
    if extra:
        errors.append(f"{where}: unknown key(s) {extra}")


def _train_config(where: str, data, base: TrainConfig, errors: list) -> TrainConfig:
    if data is None:
        return base
    if not isinstance(data, dict):
        errors.append(f"{where}: must be a mapping")
        return base
    _unknown(where, data, TRAIN_KEYS, errors)
    try:
        return replace(base, **{k: v for k, v in data.items() if k in TRAIN_KEYS})
    except (TypeError, ValueError) as exc:
        errors.append(f"{where}: {exc}")
        return base


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _scenario_grid(where, entry, keys, seed, train, errors):
    """Expand list-valued strategy/base_classes into ScenarioConfigs."""
    if not isinstance(entry, dict):
        errors.append(f"{where}: must be a mapping")
        return []
    _unknown(where, entry, keys, errors)
    for req in ("strategy", "base_classes"):
        if req not in entry:
            errors.append(f"{where}: missing required key {req!r}")
    if any(req not in entry for req in ("strategy", "base_classes")):
        return []
    tcfg = _train_config(f"{where}.train", entry.get("train"), train, errors)
    common = {}
    for k in ("runs", "memory", "train_fraction", "update_weight_decay", "preallocate"):
        if k in entry and k in keys:
            common[k] = entry[k]
    episodes = entry.get("episodes", [2])
    if not isinstance(episodes, (list, tuple)):
        errors.append(f"{where}.episodes: must be a list of class increments")
        episodes = []
    out = []
    for strategy, b in itertools.product(_as_list(entry["strategy"]), _as_list(entry["base_classes"])):
        try:
            cfg = ScenarioConfig(
                strategy=strategy, base_classes=int(b), episodes=tuple(episodes),
                seed=int(entry.get("seed", seed)), train=tcfg, **common,
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}: {exc}")
            continue
        label = f"{strategy}_B{cfg.base_classes}_" + ("-".join(f"+{e}" for e in cfg.episodes) or "base")
        out.append((label, cfg))
    return out


def parse_experiment(
    data,
    base_dir: Path = Path("."),
    *,
    seed_override: int | None = None,
    dataset_override: str | None = None,
) -> tuple[ExperimentPlan | None, list[str]]:
    """Build a plan and the full list of problems found (empty when valid).

    ``seed_override`` replaces the top-level seed, each scenario's seed and
    the synthetic dataset seed.
    """
    errors: list[str] = []
    if not isinstance(data, dict):
        return None, ["experiment file must be a YAML mapping"]
    _unknown("experiment", data, TOP_KEYS, errors)
    if "seed" not in data and seed_override is None:
        errors.append("experiment: explicit 'seed' is required")
    seed = seed_override if seed_override is not None else data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors.append(f"experiment: seed must be an integer, got {seed!r}")
        seed = 0

    path, synthetic = None, None
    if dataset_override is not None:
        path = Path(dataset_override)
    else:
        ds = data.get("dataset")
        if not isinstance(ds, dict):
            errors.append("experiment: 'dataset' mapping with 'path' or 'synthetic' is required")
        else:
            _unknown("dataset", ds, DATASET_KEYS, errors)
            if ("path" in ds) == ("synthetic" in ds):
                errors.append("dataset: give exactly one of 'path' or 'synthetic'")
            elif "path" in ds:
                path = Path(ds["path"])
                if not path.is_absolute():
                    path = base_dir / path
            else:
                spec = dict(ds["synthetic"] or {})
                if seed_override is not None:
                    spec["seed"] = seed_override
                try:
                    synthetic = SyntheticSpec.from_dict(spec)
                    synthetic.validate()
                except SpecError as exc:
                    errors.append(f"dataset.synthetic: {exc}")
    if path is not None and not path.exists():
        errors.append(f"dataset: file {path} does not exist")

    train = _train_config("train", data.get("train"), TrainConfig(), errors)
    plan = ExperimentPlan(str(data.get("name", "experiment")), seed, data.get("output"), path, synthetic)

    def entries(key, keys):
        raw = data.get(key) or []
        if not isinstance(raw, list):
            errors.append(f"experiment: '{key}' must be a list")
            return []
        found = []
        for i, entry in enumerate(raw):
            if seed_override is not None and isinstance(entry, dict):
                entry = {**entry, "seed": seed_override}
            found.append((i, entry, _scenario_grid(f"{key}[{i}]", entry, keys, seed, train, errors)))
        return found

    for i, _, grid in entries("scenarios", SCENARIO_KEYS):
        plan.scenarios.extend(ScenarioEntry(label, cfg) for label, cfg in grid)
    for i, entry, grid in entries("sweeps", SWEEP_KEYS):
        sizes = entry.get("sizes") if isinstance(entry, dict) else None
        if not isinstance(sizes, list) or not sizes:
            errors.append(f"sweeps[{i}]: 'sizes' must be a non-empty list")
            continue
        for s in sizes:
            if s != FULL_MEMORY and (not isinstance(s, int) or isinstance(s, bool)):
                errors.append(f"sweeps[{i}]: memory size {s!r} is neither an integer nor {FULL_MEMORY!r}")
        for label, cfg in grid:
            plan.sweeps.append(SweepEntry(f"sweep_{label}", cfg, list(sizes)))
    if not plan.scenarios and not plan.sweeps and not errors:
        errors.append("experiment: no scenarios or sweeps declared")
    return plan, errors


def check_plan(plan: ExperimentPlan, n_available: int | None) -> list[str]:
    """Scenario-level validation against the dataset's class count."""
    errors = []
    for s in plan.scenarios:
        errors.extend(f"{s.label}: {e}" for e in s.config.validate(n_available))
    for s in plan.sweeps:
        errors.extend(f"{s.label}: {e}" for e in replace(s.template, memory=FULL_MEMORY).validate(n_available))
        for size in s.sizes:
            if isinstance(size, int) and size < s.template.n_needed:
                errors.append(f"{s.label}: memory size {size} smaller than {s.template.n_needed} classes")
    return errors


def load_experiment(
    source: str | Path,
    *,
    seed_override: int | None = None,
    dataset_override: str | None = None,
) -> tuple[ExperimentPlan | None, list[str]]:
    path = resolve_source(str(source))
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        return None, [f"cannot read experiment file {path}: {exc.strerror}"]
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        return None, [f"{path}: invalid YAML: {exc}"]
    return parse_experiment(
        data, Path(path).parent, seed_override=seed_override, dataset_override=dataset_override
    )
