"""Versioned binary checkpoints (magic ``CILF``).

Layout, all little-endian::

    "CILF" | version u32 | K u32 | C u32 | activation u8 | dtype width u8
    arch: in_channels, length, conv1, conv2, kernel, dense  (6 x u32)
    n_tensors u32, then per tensor: name (u32 len + utf-8) | ndim u8 | dims u32...
    raw parameter arrays in table order
    NormStats: iat_log_max f64 | ps_ceiling f64 | length u32
    metadata: u32 len + utf-8 JSON
"""

from __future__ import annotations

import json
from pathlib import Path

from ..binfmt import FormatError, Reader, Writer, check_magic, dtype_code, dtype_from_code
from ..features import NormStats
from .network import ACTIVATIONS, INIT_SCHEME, PARAM_ORDER, Architecture, Network

MAGIC = b"CILF"
VERSION = 1


def save_checkpoint(net: Network, stats: NormStats, path, metadata: dict | None = None) -> None:
    meta = {"init": INIT_SCHEME, "normalization": "ps/ceiling; ln(1+iat)/iat_log_max; dir +-1"}
    meta.update(metadata or {})
    width = dtype_code(net.dtype)
    a = net.arch
    with open(path, "wb") as fh:
        w = Writer(fh)
        fh.write(MAGIC)
        w.pack("IIIBB", VERSION, net.n_units, net.active_classes, ACTIVATIONS.index(net.activation), width)
        w.pack("6I", a.in_channels, a.length, a.conv1_filters, a.conv2_filters, a.kernel, a.dense_units)
        w.pack("I", len(PARAM_ORDER))
        for name in PARAM_ORDER:
            shape = net.params[name].shape
            w.text(name)
            w.pack("B", len(shape))
            w.pack(f"{len(shape)}I", *shape)
        for name in PARAM_ORDER:
            w.array(net.params[name], net.dtype)
        w.pack("ddI", stats.iat_log_max, stats.ps_ceiling, stats.length)
        w.text(json.dumps(meta, sort_keys=True))


def load_checkpoint(path) -> tuple[Network, NormStats, dict]:
    """Return ``(net, stats, metadata)``; raises :class:`FormatError`."""
    with open(path, "rb") as fh:
        r = Reader(fh)
        check_magic(r, MAGIC, VERSION)
        k, c, act, width = r.unpack("IIBB")
        if act >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation code {act}")
        dtype = dtype_from_code(width)
        arch = Architecture(*r.unpack("6I"))
        expected = arch.param_shapes(k)
        table = []
        for _ in range(r.unpack("I")):
            name = r.text()
            ndim = r.unpack("B")
            dims = r.unpack(f"{ndim}I") if ndim else ()
            shape = (dims,) if isinstance(dims, int) else tuple(dims)
            if expected.get(name) != shape:
                raise FormatError(
                    f"shape disagreement for {name}: file has {shape}, architecture implies {expected.get(name)}"
                )
            table.append((name, shape))
        if [n for n, _ in table] != list(PARAM_ORDER):
            raise FormatError(f"unexpected tensor table {[n for n, _ in table]}")
        params = {name: r.array(shape, dtype) for name, shape in table}
        iat_log_max, ps_ceiling, length = r.unpack("ddI")
        meta = json.loads(r.text())
        r.expect_eof()
    try:
        net = Network(params, arch, ACTIVATIONS[act], c)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    return net, NormStats(iat_log_max, ps_ceiling, length), meta


def save_stats_json(stats: NormStats, path) -> None:
    Path(path).write_text(stats.to_json() + "\n")
