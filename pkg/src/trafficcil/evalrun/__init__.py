from .metrics import confusion_matrix, macro_f1, per_class_f1
from .scenario import (
    FULL_MEMORY,
    EpisodeResult,
    MemorySweepReport,
    ModelCache,
    RunData,
    ScenarioConfig,
    ScenarioReport,
    memory_sweep,
    prepare_run,
    run_scenario,
    stratified_split,
    upperbound_model,
)
from .stats import HeatmapStats, heatmap_stats

__all__ = [
    "EpisodeResult",
    "FULL_MEMORY",
    "HeatmapStats",
    "MemorySweepReport",
    "ModelCache",
    "RunData",
    "ScenarioConfig",
    "ScenarioReport",
    "confusion_matrix",
    "heatmap_stats",
    "macro_f1",
    "memory_sweep",
    "per_class_f1",
    "prepare_run",
    "run_scenario",
    "stratified_split",
    "upperbound_model",
]
