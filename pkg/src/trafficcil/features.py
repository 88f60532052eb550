"""Fixed-shape model inputs: 3 x 100 series of PS, IAT and DIR."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dataio import PS_CEILING, SERIES_LEN, FlowDataset, FlowRecord

PS, IAT, DIR = 0, 1, 2
N_CHANNELS = 3


@dataclass(frozen=True)
class NormStats:
    """IAT is mapped through ``ln(1 + iat_us) / iat_log_max``."""

    iat_log_max: float
    ps_ceiling: float = PS_CEILING
    length: int = SERIES_LEN

    def __post_init__(self) -> None:
        if not self.iat_log_max > 0:
            raise ValueError(f"iat_log_max must be > 0, got {self.iat_log_max}")

    def to_json(self) -> str:
        return json.dumps(
            {"iat_log_max": self.iat_log_max, "ps_ceiling": self.ps_ceiling, "length": self.length}
        )

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        d = json.loads(text)
        return cls(float(d["iat_log_max"]), float(d["ps_ceiling"]), int(d["length"]))


@dataclass(frozen=True)
class FlowTensor:
    channels: np.ndarray
    label: int
    pad_mask: np.ndarray


def fit_normalizer(train: FlowDataset) -> NormStats:
    """Fit on training flows only; the floor ``ln 2`` covers all-zero IATs."""
    if len(train) == 0:
        raise ValueError("cannot fit normalizer on an empty dataset")
    top = max(max(r.iat_us) for r in train.records)
    return NormStats(iat_log_max=max(math.log1p(top), math.log(2.0)))


def _encode(flow: FlowRecord, stats: NormStats) -> tuple[np.ndarray, int]:
    n = min(len(flow), stats.length)
    out = np.zeros((N_CHANNELS, stats.length), dtype=np.float32)
    ps = np.asarray(flow.ps[:n], dtype=np.float64)
    iat = np.asarray(flow.iat_us[:n], dtype=np.float64)
    out[PS, :n] = np.clip(ps / stats.ps_ceiling, 0.0, 1.0)
    out[IAT, :n] = np.clip(np.log1p(iat) / stats.iat_log_max, 0.0, 1.0)
    out[DIR, :n] = [1.0 if d == "up" else -1.0 for d in flow.dir[:n]]
    return out, n


def to_tensor(flow: FlowRecord, stats: NormStats, label: int = -1) -> FlowTensor:
    channels, n = _encode(flow, stats)
    pad = np.zeros(stats.length, dtype=bool)
    pad[n:] = True
    return FlowTensor(channels, label, pad)


def tensorize_dataset(ds: FlowDataset, stats: NormStats) -> list[FlowTensor]:
    labels = ds.targets()
    return [to_tensor(r, stats, int(y)) for r, y in zip(ds.records, labels)]


def stack(tensors: list[FlowTensor]) -> tuple[np.ndarray, np.ndarray]:
    """Batch array ``(n, 3, L)`` and label vector from a list of tensors."""
    if not tensors:
        return np.zeros((0, N_CHANNELS, SERIES_LEN), dtype=np.float32), np.zeros(0, dtype=np.int64)
    x = np.stack([t.channels for t in tensors])
    y = np.array([t.label for t in tensors], dtype=np.int64)
    return x, y


def dataset_arrays(ds: FlowDataset, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """Shortcut for ``stack(tensorize_dataset(ds, stats))``."""
    x = np.zeros((len(ds), N_CHANNELS, stats.length), dtype=np.float32)
    for i, r in enumerate(ds.records):
        x[i] = _encode(r, stats)[0]
    return x, ds.targets()


def pad_mask(x: np.ndarray) -> np.ndarray:
    """Padded positions of a batch; valid packets always carry DIR = +-1."""
    return x[:, DIR, :] == 0
