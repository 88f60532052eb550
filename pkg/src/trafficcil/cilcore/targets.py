from __future__ import annotations

from typing import Sequence

import numpy as np

from ..neural import LossTargets, Network, logits
from ..neural.network import sigmoid, softmax


def distillation_targets(old_net: Network, x: np.ndarray, mode: str) -> np.ndarray:
    """Soft outputs of the frozen model over its active units."""
    z = logits(old_net, x)[:, : old_net.active_classes].astype(np.float64)
    return sigmoid(z) if mode == "sigmoid" else softmax(z)


def build_targets(
    old_net: Network | None,
    x: np.ndarray,
    y: np.ndarray,
    new_classes: Sequence[int],
    mode: str,
    *,
    zero_units: int = 0,
    dtype=np.float32,
) -> LossTargets:
    """Classification (+ distillation when ``old_net`` is given) targets.

    ``new_classes`` must be the contiguous ids following the old model's
    active classes; samples of older classes are rehearsal samples. Without
    an old model every class is "new", which is plain one-hot training.
    """
    y = np.asarray(y, dtype=np.int64)
    n_old = 0 if old_net is None else old_net.active_classes
    new_classes = list(new_classes)
    if new_classes != list(range(n_old, n_old + len(new_classes))):
        raise ValueError(
            f"new classes {new_classes} must be contiguous ids starting at {n_old}"
        )
    total = n_old + len(new_classes)
    bad = (y < 0) | (y >= total)
    if bad.any():
        raise ValueError(f"class id {int(y[bad][0])} outside the unit range [0, {total})")
    if old_net is None and len(x) and len(new_classes) == 0:
        raise ValueError("no classes to train")

    if mode == "sigmoid":
        cls = np.zeros((len(y), len(new_classes)), dtype=dtype)
        is_new = y >= n_old
        cls[np.flatnonzero(is_new), y[is_new] - n_old] = 1
    elif mode == "softmax":
        if zero_units:
            raise ValueError("zero_units only applies to sigmoid heads")
        cls = np.zeros((len(y), total), dtype=dtype)
        cls[np.arange(len(y)), y] = 1
    else:
        raise ValueError(f"unknown mode {mode!r}")
    distill = None
    if old_net is not None:
        distill = distillation_targets(old_net, x, mode).astype(dtype)
    return LossTargets(mode, cls, distill, zero_units)
