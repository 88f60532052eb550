"""Momentum SGD with step-halving learning rate and the mini-batch loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .losses import LossTargets, loss_and_grad
from .network import PARAM_ORDER, Network

log = logging.getLogger(__name__)

TargetSource = Union[LossTargets, Callable[[np.ndarray], LossTargets]]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr0: float = 1e-2
    lr_halving_period: int = 50
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_halving_period < 1:
            raise ValueError(f"lr_halving_period must be >= 1, got {self.lr_halving_period}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * 0.5 ** (epoch // self.lr_halving_period)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0

    @classmethod
    def zeros_like(cls, net: Network, names=PARAM_ORDER) -> "OptimizerState":
        return cls({k: np.zeros_like(net.params[k]) for k in names})


def sgd_step(
    net: Network, grads: dict[str, np.ndarray], opt: OptimizerState, config: TrainConfig
) -> tuple[Network, OptimizerState]:
    """One momentum step, in place: ``v <- mu*v - lr*g; theta <- theta + v``.

    Only parameters present in ``grads`` move.
    """
    lr = config.lr_at(opt.epoch)
    for name, g in grads.items():
        v = opt.velocity.get(name)
        if v is None or v.shape != g.shape:
            v = opt.velocity[name] = np.zeros_like(net.params[name])
        v *= config.momentum
        v -= lr * g
        net.params[name] += v
    return net, opt


def train(
    net: Network,
    x: np.ndarray,
    targets: TargetSource,
    config: TrainConfig,
    *,
    trainable=PARAM_ORDER,
) -> tuple[Network, list[float]]:
    """Train a copy of ``net`` and return it with the per-epoch mean loss.

    ``targets`` is either a :class:`LossTargets` aligned with ``x`` or a
    callable mapping a batch index array to one. Batches are reshuffled
    every epoch from ``(config.seed, epoch)``.
    """
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    if isinstance(targets, LossTargets) and len(targets) != n:
        raise ValueError(f"{len(targets)} targets for {n} samples")
    x = np.asarray(x, dtype=net.dtype)
    net = net.copy()
    trainable = tuple(trainable)
    opt = OptimizerState.zeros_like(net, trainable)
    history = []
    for epoch in range(config.epochs):
        opt.epoch = epoch
        order = np.random.default_rng((config.seed, epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            t = targets[idx] if isinstance(targets, LossTargets) else targets(idx)
            loss, grads = loss_and_grad(
                net, x[idx], t, weight_decay=config.weight_decay, trainable=trainable
            )
            sgd_step(net, grads, opt, config)
            total += loss * len(idx)
        history.append(total / n)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("epoch %d lr %.3g loss %.5f", epoch, config.lr_at(epoch), history[-1])
    return net, history
