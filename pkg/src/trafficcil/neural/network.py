"""1D-CNN flow classifier with hand-written forward and backward passes.

Activations are kept channels-last internally, ``(batch, position, channel)``,
so every convolution reduces to a single GEMM over unfolded windows. The
public input layout is ``(batch, channel, position)`` as produced by
:mod:`trafficcil.features`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sigmoid", "softmax")

PARAM_ORDER = (
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "dense_w",
    "dense_b",
    "head_w",
    "head_b",
)
BACKBONE_PARAMS = PARAM_ORDER[:6]
HEAD_PARAMS = PARAM_ORDER[6:]

INIT_SCHEME = "he_uniform"

# forward passes above this size are chunked to bound peak memory
_EVAL_CHUNK = 1024


@dataclass(frozen=True)
class Architecture:
    """Layer sizes. Defaults reproduce the reference traffic model."""

    in_channels: int = 3
    length: int = 100
    conv1_filters: int = 16
    conv2_filters: int = 32
    kernel: int = 3
    dense_units: int = 256

    @property
    def conv1_len(self) -> int:
        return self.length - self.kernel + 1

    @property
    def pool1_len(self) -> int:
        return self.conv1_len // 2

    @property
    def conv2_len(self) -> int:
        return self.pool1_len - self.kernel + 1

    @property
    def pool2_len(self) -> int:
        return self.conv2_len // 2

    @property
    def flat_size(self) -> int:
        return self.pool2_len * self.conv2_filters

    def validate(self) -> None:
        if min(self.in_channels, self.conv1_filters, self.conv2_filters, self.dense_units) < 1:
            raise ValueError(f"non-positive layer size in {self}")
        if self.pool2_len < 1:
            raise ValueError(f"input length {self.length} too short for two conv/pool stages")

    def param_shapes(self, n_units: int) -> dict[str, tuple[int, ...]]:
        return {
            "conv1_w": (self.conv1_filters, self.in_channels, self.kernel),
            "conv1_b": (self.conv1_filters,),
            "conv2_w": (self.conv2_filters, self.conv1_filters, self.kernel),
            "conv2_b": (self.conv2_filters,),
            "dense_w": (self.flat_size, self.dense_units),
            "dense_b": (self.dense_units,),
            "head_w": (self.dense_units, n_units),
            "head_b": (n_units,),
        }


@dataclass
class Network:
    """Backbone (conv1, conv2, dense) plus a single-layer head.

    ``head_w`` has one column per output unit; only the first
    ``active_classes`` units are mapped to known classes, the rest are
    pre-allocated spares.
    """

    params: dict[str, np.ndarray]
    arch: Architecture = field(default_factory=Architecture)
    activation: str = "softmax"
    active_classes: int = 1

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 1 <= self.active_classes <= self.n_units:
            raise ValueError(
                f"active_classes={self.active_classes} outside [1, {self.n_units}]"
            )

    @property
    def n_units(self) -> int:
        return self.params["head_b"].shape[0]

    @property
    def free_units(self) -> int:
        return self.n_units - self.active_classes

    @property
    def dtype(self) -> np.dtype:
        return self.params["head_w"].dtype

    def copy(self) -> "Network":
        return Network(
            params={k: v.copy() for k, v in self.params.items()},
            arch=self.arch,
            activation=self.activation,
            active_classes=self.active_classes,
        )

    def with_params(self, **changes) -> "Network":
        net = copy.copy(self)
        net.params = dict(self.params)
        net.params.update(changes)
        return net

    def astype(self, dtype) -> "Network":
        net = self.copy()
        net.params = {k: v.astype(dtype) for k, v in net.params.items()}
        return net

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def init_network(
    n_units: int,
    seed: int,
    *,
    arch: Architecture | None = None,
    activation: str = "softmax",
    active_classes: int | None = None,
    dtype=np.float32,
) -> Network:
    """Fresh network with fan-in scaled uniform weights and zero biases."""
    if n_units < 1:
        raise ValueError(f"head needs at least one unit, got K={n_units}")
    arch = arch or Architecture()
    arch.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes(n_units).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
        bound = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Network(
        params=params,
        arch=arch,
        activation=activation,
        active_classes=n_units if active_classes is None else active_classes,
    )


# ---------------------------------------------------------------------------
# layer primitives (channels-last)


def _unfold(x: np.ndarray, k: int) -> np.ndarray:
    """(n, L, c) -> (n, L-k+1, k*c), window offset major."""
    lout = x.shape[1] - k + 1
    return np.concatenate([x[:, j : j + lout, :] for j in range(k)], axis=2)


def _conv_weight_matrix(w: np.ndarray) -> np.ndarray:
    f, cin, k = w.shape
    return w.transpose(0, 2, 1).reshape(f, k * cin)


def _conv_forward(x, w, b):
    n = x.shape[0]
    f, _, k = w.shape
    cols = _unfold(x, k)
    lout = cols.shape[1]
    out = cols.reshape(n * lout, -1) @ _conv_weight_matrix(w).T + b
    return out.reshape(n, lout, f), cols


def _conv_backward(dout, cols, w, need_input_grad: bool):
    n, lout, f = dout.shape
    _, cin, k = w.shape
    d2 = dout.reshape(n * lout, f)
    dwm = d2.T @ cols.reshape(n * lout, -1)
    dw = dwm.reshape(f, k, cin).transpose(0, 2, 1)
    db = d2.sum(axis=0)
    dx = None
    if need_input_grad:
        dcols = (d2 @ _conv_weight_matrix(w)).reshape(n, lout, k * cin)
        dx = np.zeros((n, lout + k - 1, cin), dtype=dout.dtype)
        for j in range(k):
            dx[:, j : j + lout, :] += dcols[:, :, j * cin : (j + 1) * cin]
    return dw, db, dx


def _relu_pool_forward(z):
    """ReLU then max-pool (window 2, stride 2); max commutes with ReLU."""
    n, length, c = z.shape
    p = length // 2
    zr = z[:, : 2 * p].reshape(n, p, 2, c)
    even, odd = zr[:, :, 0], zr[:, :, 1]
    take_even = even >= odd
    m = np.maximum(even, odd)
    return np.maximum(m, 0), (take_even, m > 0)


def _relu_pool_backward(dout, masks, in_len):
    take_even, positive = masks
    n, p, c = dout.shape
    g = np.where(positive, dout, 0)
    dz = np.zeros((n, in_len, c), dtype=dout.dtype)
    dzr = dz[:, : 2 * p].reshape(n, p, 2, c) if in_len == 2 * p else None
    if dzr is not None:
        dzr[:, :, 0] = np.where(take_even, g, 0)
        dzr[:, :, 1] = g - dzr[:, :, 0]
    else:
        dz[:, 0 : 2 * p : 2] = np.where(take_even, g, 0)
        dz[:, 1 : 2 * p : 2] = g - dz[:, 0 : 2 * p : 2]
    return dz


def _check_input(net: Network, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    a = net.arch
    if x.ndim != 3 or x.shape[1:] != (a.in_channels, a.length):
        raise ValueError(
            f"expected batch of shape (n, {a.in_channels}, {a.length}), got {x.shape}"
        )
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return x.astype(net.dtype, copy=False)


def _forward_cached(net: Network, x: np.ndarray):
    p = net.params
    h0 = x.transpose(0, 2, 1)
    z1, cols1 = _conv_forward(h0, p["conv1_w"], p["conv1_b"])
    h1, pool1 = _relu_pool_forward(z1)
    z2, cols2 = _conv_forward(h1, p["conv2_w"], p["conv2_b"])
    h2, pool2 = _relu_pool_forward(z2)
    flat = h2.reshape(h2.shape[0], -1)
    z3 = flat @ p["dense_w"] + p["dense_b"]
    feats = np.maximum(z3, 0)
    logits = feats @ p["head_w"] + p["head_b"]
    cache = dict(
        cols1=cols1, len1=z1.shape[1], pool1=pool1,
        cols2=cols2, len2=z2.shape[1], pool2=pool2,
        h2_shape=h2.shape, flat=flat, z3=z3, feats=feats,
    )
    return feats, logits, cache


def _backward(net: Network, cache, dlogits, trainable) -> dict[str, np.ndarray]:
    p = net.params
    grads: dict[str, np.ndarray] = {}
    feats = cache["feats"]
    grads["head_w"] = feats.T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    if not any(name in trainable for name in BACKBONE_PARAMS):
        return grads
    dz3 = (dlogits @ p["head_w"].T) * (cache["z3"] > 0)
    grads["dense_w"] = cache["flat"].T @ dz3
    grads["dense_b"] = dz3.sum(axis=0)
    dh2 = (dz3 @ p["dense_w"].T).reshape(cache["h2_shape"])
    dz2 = _relu_pool_backward(dh2, cache["pool2"], cache["len2"])
    grads["conv2_w"], grads["conv2_b"], dh1 = _conv_backward(
        dz2, cache["cols2"], p["conv2_w"], need_input_grad=True
    )
    dz1 = _relu_pool_backward(dh1, cache["pool1"], cache["len1"])
    grads["conv1_w"], grads["conv1_b"], _ = _conv_backward(
        dz1, cache["cols1"], p["conv1_w"], need_input_grad=False
    )
    return grads


# ---------------------------------------------------------------------------
# public forward API


def activate(logits: np.ndarray, activation: str) -> np.ndarray:
    if activation == "sigmoid":
        return sigmoid(logits)
    return softmax(logits)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    s = z - z.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def logits(net: Network, x: np.ndarray) -> np.ndarray:
    """Raw head outputs for all K units."""
    return _run_chunked(net, x)[1]


def features(net: Network, x: np.ndarray) -> np.ndarray:
    """Backbone outputs (post-ReLU dense layer), shape (n, dense_units)."""
    return _run_chunked(net, x)[0]


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(features, outputs)`` with outputs over the active units only.

    Sigmoid heads are applied elementwise; softmax normalizes across the
    active units, so spare units never take probability mass.
    """
    feats, z = _run_chunked(net, x)
    return feats, activate(z[:, : net.active_classes], net.activation)


def _run_chunked(net: Network, x: np.ndarray):
    x = _check_input(net, x)
    if x.shape[0] <= _EVAL_CHUNK:
        feats, z, _ = _forward_cached(net, x)
        return feats, z
    parts = [_forward_cached(net, x[i : i + _EVAL_CHUNK])[:2] for i in range(0, len(x), _EVAL_CHUNK)]
    return np.concatenate([f for f, _ in parts]), np.concatenate([z for _, z in parts])


def predict_head(net: Network, x: np.ndarray) -> np.ndarray:
    """Argmax over active units (ties to the lowest unit)."""
    return np.argmax(logits(net, x)[:, : net.active_classes], axis=1)
