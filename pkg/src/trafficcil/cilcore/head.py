from __future__ import annotations

import numpy as np

from ..neural import Network, TrainConfig, train
from .targets import build_targets


def expand_head(net: Network, k_add: int) -> Network:
    """Append ``k_add`` zero-initialized output units; nothing else changes."""
    if k_add < 1:
        raise ValueError(f"k_add must be >= 1, got {k_add}")
    w, b = net.params["head_w"], net.params["head_b"]
    out = net.copy()
    out.params["head_w"] = np.concatenate([w, np.zeros((w.shape[0], k_add), dtype=w.dtype)], axis=1)
    out.params["head_b"] = np.concatenate([b, np.zeros(k_add, dtype=b.dtype)])
    return out


def preallocate_head(
    net: Network, n_units: int, x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[Network, list[float]]:
    """Grow a sigmoid head to ``n_units`` and run the "fake update".

    All known samples are replayed with one-hot labels extended by zeros
    over the spare units, which drives the spare sigmoids toward 0.
    """
    c = net.active_classes
    if n_units <= c:
        raise ValueError(f"pre-allocated size K={n_units} must exceed active classes C={c}")
    if net.activation != "sigmoid":
        raise ValueError("the fake update only applies to sigmoid heads")
    grown = expand_head(net, n_units - net.n_units) if n_units > net.n_units else net.copy()
    targets = build_targets(None, x, y, range(c), "sigmoid", zero_units=n_units - c)
    return train(grown, x, targets, cfg)
