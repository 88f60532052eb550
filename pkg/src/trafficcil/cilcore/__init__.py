from .head import expand_head, preallocate_head
from .memory import (
    Centroids,
    ExemplarMemory,
    build_memory,
    class_quotas,
    compute_centroids,
    herding_select,
    l2_normalize,
    load_memory,
    nmc_classify,
    rebuild_memory,
    save_memory,
)
from .strategies import (
    HEAD_MODES,
    STRATEGIES,
    STRATEGY_ACTIVATION,
    UPDATE_WEIGHT_DECAY,
    UPDATERS,
    Learner,
    UpdateReport,
    train_upperbound,
    train_upperbound_herded,
    update_fixed_repr,
    update_icarl,
    update_icarlplus,
)
from .targets import build_targets, distillation_targets

__all__ = [
    "Centroids",
    "ExemplarMemory",
    "HEAD_MODES",
    "Learner",
    "STRATEGIES",
    "STRATEGY_ACTIVATION",
    "UPDATERS",
    "UPDATE_WEIGHT_DECAY",
    "UpdateReport",
    "build_memory",
    "build_targets",
    "class_quotas",
    "compute_centroids",
    "distillation_targets",
    "expand_head",
    "herding_select",
    "l2_normalize",
    "load_memory",
    "nmc_classify",
    "preallocate_head",
    "rebuild_memory",
    "save_memory",
    "train_upperbound",
    "train_upperbound_herded",
    "update_fixed_repr",
    "update_icarl",
    "update_icarlplus",
]
