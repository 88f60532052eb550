"""Model update strategies: iCarl, iCarl+, fixed representation, upperbounds."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..neural import (
    HEAD_PARAMS,
    PARAM_ORDER,
    Architecture,
    Network,
    TrainConfig,
    features,
    init_network,
    predict_head,
    train,
)
from .head import expand_head
from .memory import (
    Centroids,
    ExemplarMemory,
    build_memory,
    compute_centroids,
    l2_normalize,
    nmc_classify,
    rebuild_memory,
)
from .targets import build_targets

log = logging.getLogger(__name__)

UPDATE_WEIGHT_DECAY = 1e-5
HEAD_MODES = ("softmax", "sigmoid", "nmc-readout")
STRATEGIES = ("upperbound", "upperbound_herded", "fixed_repr", "icarl", "icarlplus")
# head activation each update strategy expects from its starting model
STRATEGY_ACTIVATION = {"icarl": "sigmoid", "icarlplus": "softmax", "fixed_repr": "softmax"}


@dataclass
class Learner:
    """A network plus the rule used to read predictions out of it."""

    net: Network
    classifier: str = "head"
    centroids: Centroids | None = None

    def __post_init__(self) -> None:
        if self.classifier not in ("head", "nmc"):
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.classifier == "nmc" and self.centroids is None:
            raise ValueError("NMC classification needs centroids")

    @property
    def n_classes(self) -> int:
        return self.net.active_classes

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.classifier == "head":
            return predict_head(self.net, x)
        return nmc_classify(l2_normalize(features(self.net, x).astype(np.float64)), self.centroids)


@dataclass
class UpdateReport:
    strategy: str
    classes_added: int
    seconds: float
    n_train: int
    memory_total: int
    history: list[float] = field(default_factory=list)


def _new_class_ids(new_y: np.ndarray, n_old: int) -> list[int]:
    present = sorted(int(c) for c in np.unique(new_y))
    if not present:
        raise ValueError("update data is empty")
    expected = list(range(n_old, n_old + len(present)))
    if present != expected:
        raise ValueError(f"new-class ids {present} must be the contiguous range {expected}")
    return present


def _rehearsal_set(mem: ExemplarMemory, new_x, new_y):
    mx, my = mem.arrays()
    return np.concatenate([mx, np.asarray(new_x, dtype=mx.dtype)]), np.concatenate([my, new_y])


def update_icarl(
    learner: Learner,
    mem: ExemplarMemory,
    new_x: np.ndarray,
    new_y: np.ndarray,
    cfg: TrainConfig,
    *,
    weight_decay: float = UPDATE_WEIGHT_DECAY,
) -> tuple[Learner, ExemplarMemory, UpdateReport]:
    """Consume pre-allocated sigmoid units; BCE distillation + classification; NMC readout."""
    t0 = time.perf_counter()
    net = learner.net
    if net.activation != "sigmoid":
        raise ValueError("iCarl updates need a sigmoid head")
    old_c = net.active_classes
    new_ids = _new_class_ids(new_y, old_c)
    if net.free_units < len(new_ids):
        raise ValueError(
            f"insufficient free head units: {net.free_units} free, {len(new_ids)} new classes"
        )
    x, y = _rehearsal_set(mem, new_x, new_y)
    targets = build_targets(net, x, y, new_ids, "sigmoid")
    trained, history = train(net, x, targets, replace(cfg, weight_decay=weight_decay))
    trained.active_classes = old_c + len(new_ids)
    mem = rebuild_memory(mem, trained, new_x, new_y, trained.active_classes)
    out = Learner(trained, "nmc", compute_centroids(mem, trained))
    report = UpdateReport("icarl", len(new_ids), time.perf_counter() - t0, len(x), mem.total, history)
    return out, mem, report


def _softmax_update(learner, mem, new_x, new_y, cfg, weight_decay, trainable, name):
    t0 = time.perf_counter()
    net = learner.net
    if net.activation != "softmax":
        raise ValueError(f"{name} updates need a softmax head")
    old_c = net.active_classes
    new_ids = _new_class_ids(new_y, old_c)
    x, y = _rehearsal_set(mem, new_x, new_y)
    targets = build_targets(net, x, y, new_ids, "softmax")
    # the head fits exactly the number of classes known after the update
    grown = expand_head(net.with_params(
        head_w=net.params["head_w"][:, :old_c], head_b=net.params["head_b"][:old_c]
    ), len(new_ids))
    grown.active_classes = old_c + len(new_ids)
    trained, history = train(
        grown, x, targets, replace(cfg, weight_decay=weight_decay), trainable=trainable
    )
    mem = rebuild_memory(mem, trained, new_x, new_y, trained.active_classes)
    report = UpdateReport(name, len(new_ids), time.perf_counter() - t0, len(x), mem.total, history)
    return Learner(trained, "head"), mem, report


def update_icarlplus(
    learner: Learner,
    mem: ExemplarMemory,
    new_x: np.ndarray,
    new_y: np.ndarray,
    cfg: TrainConfig,
    *,
    weight_decay: float = UPDATE_WEIGHT_DECAY,
) -> tuple[Learner, ExemplarMemory, UpdateReport]:
    """Dynamic head expansion; softmax CE + old-unit softmax distillation; head readout."""
    return _softmax_update(learner, mem, new_x, new_y, cfg, weight_decay, PARAM_ORDER, "icarlplus")


def update_fixed_repr(
    learner: Learner,
    mem: ExemplarMemory,
    new_x: np.ndarray,
    new_y: np.ndarray,
    cfg: TrainConfig,
    *,
    weight_decay: float = UPDATE_WEIGHT_DECAY,
) -> tuple[Learner, ExemplarMemory, UpdateReport]:
    """As :func:`update_icarlplus` with the backbone frozen."""
    return _softmax_update(learner, mem, new_x, new_y, cfg, weight_decay, HEAD_PARAMS, "fixed_repr")


UPDATERS = {
    "icarl": update_icarl,
    "icarlplus": update_icarlplus,
    "fixed_repr": update_fixed_repr,
}


def train_upperbound(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    cfg: TrainConfig,
    head_mode: str = "softmax",
    *,
    memory_budget: int = 1000,
    n_units: int | None = None,
    arch: Architecture | None = None,
    dtype=np.float32,
) -> tuple[Learner, list[float]]:
    """Train from scratch on every class.

    ``nmc-readout`` trains a sigmoid head, herds a ``memory_budget``
    exemplar memory with its backbone and classifies by nearest mean.
    """
    if head_mode not in HEAD_MODES:
        raise ValueError(f"head_mode must be one of {HEAD_MODES}, got {head_mode!r}")
    y = np.asarray(y, dtype=np.int64)
    missing = sorted(set(range(n_classes)) - set(np.unique(y).tolist()))
    if missing:
        raise ValueError(f"training data has no samples for class(es) {missing}")
    activation = "softmax" if head_mode == "softmax" else "sigmoid"
    units = n_classes if n_units is None else n_units
    net = init_network(
        units, cfg.seed, arch=arch, activation=activation, active_classes=n_classes, dtype=dtype
    )
    targets = build_targets(None, x, y, range(n_classes), activation)
    net, history = train(net, x, targets, cfg)
    if head_mode != "nmc-readout":
        return Learner(net, "head"), history
    mem = build_memory(net, x, y, memory_budget, n_classes)
    return Learner(net, "nmc", compute_centroids(mem, net)), history


def train_upperbound_herded(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    budget: int,
    cfg: TrainConfig,
    head_mode: str = "softmax",
    *,
    dtype=np.float32,
    reference: Learner | None = None,
) -> tuple[Learner, ExemplarMemory]:
    """Retrain from scratch on a herded, class-balanced subset of ``budget`` samples.

    ``reference`` may supply the already trained full-data model whose
    backbone drives herding; otherwise one is trained here and discarded.
    """
    if budget < n_classes:
        raise ValueError(f"budget {budget} smaller than the number of classes {n_classes}")
    throwaway = reference
    if throwaway is None:
        throwaway, _ = train_upperbound(x, y, n_classes, cfg, "softmax", dtype=dtype)
    mem = build_memory(throwaway.net, x, y, budget, n_classes)
    mx, my = mem.arrays()
    learner, _ = train_upperbound(
        mx, my, n_classes, cfg, head_mode, memory_budget=budget, dtype=dtype
    )
    return learner, mem
