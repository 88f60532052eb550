"""Classification + distillation losses and their analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .network import (
    PARAM_ORDER,
    Network,
    _backward,
    _check_input,
    _forward_cached,
    log_softmax,
    sigmoid,
    softmax,
)


@dataclass
class LossTargets:
    """Per-sample training targets laid out over head units.

    The head is partitioned as ``[old units | new units | future units]``.

    * ``sigmoid`` mode: per-unit binary cross-entropy. Units
      ``[0, n_old)`` are distilled toward ``distillation``; the
      ``classification`` block covers ``[n_old, n_old + width)``; the next
      ``zero_units`` units (if any) are pushed toward 0.
    * ``softmax`` mode: ``classification`` is one-hot over all active units
      ``[0, width)``; distillation is cross-entropy between the frozen
      model's old-unit softmax and the current old-unit softmax.
    """

    mode: str
    classification: np.ndarray
    distillation: np.ndarray | None = None
    zero_units: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.distillation is not None and len(self.distillation) != len(self.classification):
            raise ValueError("distillation and classification targets differ in length")
        if self.mode == "softmax" and self.zero_units:
            raise ValueError("zero_units only applies to sigmoid targets")

    def __len__(self) -> int:
        return len(self.classification)

    def __getitem__(self, idx) -> "LossTargets":
        return replace(
            self,
            classification=self.classification[idx],
            distillation=None if self.distillation is None else self.distillation[idx],
        )

    @property
    def n_old(self) -> int:
        return 0 if self.distillation is None else self.distillation.shape[1]

    @property
    def cls_offset(self) -> int:
        return self.n_old if self.mode == "sigmoid" else 0

    @property
    def n_units(self) -> int:
        """Head units touched by the loss."""
        return self.cls_offset + self.classification.shape[1] + self.zero_units

    @property
    def new_block(self) -> np.ndarray:
        """Targets over the new-class units only (one-hot or all-zero rows)."""
        return self.classification[:, self.n_old - self.cls_offset :]


def head_loss(z: np.ndarray, targets: LossTargets) -> tuple[float, np.ndarray]:
    """Batch-mean loss over head logits ``z`` and its gradient w.r.t. ``z``."""
    n = z.shape[0]
    if len(targets) != n:
        raise ValueError(f"{len(targets)} targets for a batch of {n}")
    if targets.n_units > z.shape[1]:
        raise ValueError(f"targets span {targets.n_units} units, head has {z.shape[1]}")
    dz = np.zeros_like(z)
    if targets.mode == "sigmoid":
        used = targets.n_units
        t = np.zeros((n, used), dtype=z.dtype)
        off = targets.cls_offset
        if targets.distillation is not None:
            t[:, :off] = targets.distillation
        t[:, off : off + targets.classification.shape[1]] = targets.classification
        zu = z[:, :used]
        # stable BCE from logits: max(z,0) - z t + log(1 + exp(-|z|))
        loss = np.maximum(zu, 0) - zu * t + np.log1p(np.exp(-np.abs(zu)))
        dz[:, :used] = (sigmoid(zu) - t) / n
        return float(loss.sum() / n), dz

    width = targets.classification.shape[1]
    y = targets.classification.astype(z.dtype, copy=False)
    lq = log_softmax(z[:, :width])
    loss = -(y * lq).sum()
    dz[:, :width] = softmax(z[:, :width]) * y.sum(axis=1, keepdims=True) - y
    if targets.distillation is not None:
        c = targets.n_old
        p = targets.distillation.astype(z.dtype, copy=False)
        lo = log_softmax(z[:, :c])
        loss -= (p * lo).sum()
        dz[:, :c] += softmax(z[:, :c]) * p.sum(axis=1, keepdims=True) - p
    dz /= n
    return float(loss / n), dz


def loss_and_grad(
    net: Network,
    x: np.ndarray,
    targets: LossTargets,
    *,
    weight_decay: float = 0.0,
    trainable=PARAM_ORDER,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and exact gradients for every parameter in ``trainable``.

    With ``weight_decay`` > 0 the loss gains ``wd/2 * sum(theta**2)`` over
    the trainable parameters and each gradient gains ``wd * theta``.
    Parameters outside ``trainable`` get no entry in the returned dict.
    """
    x = _check_input(net, x)
    trainable = tuple(trainable)
    _, z, cache = _forward_cached(net, x)
    loss, dz = head_loss(z, targets)
    grads = _backward(net, cache, dz, trainable)
    grads = {k: grads[k] for k in trainable}
    if weight_decay:
        for k in trainable:
            theta = net.params[k]
            loss += 0.5 * weight_decay * float(np.sum(theta.astype(np.float64) ** 2))
            grads[k] = grads[k] + weight_decay * theta
    return loss, grads
