"""Flow record ingestion (JSON lines) and a deterministic synthetic generator."""

from __future__ import annotations

import io
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DIRECTIONS = ("up", "down")
PS_CEILING = 1460
SERIES_LEN = 100


class DatasetError(ValueError):
    """Raised for unreadable or structurally invalid flow data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRecord:
    app_label: str
    ps: tuple[int, ...]
    iat_us: tuple[int, ...]
    dir: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ps)

    def to_json(self) -> str:
        return json.dumps(
            {"app": self.app_label, "ps": list(self.ps), "iat_us": list(self.iat_us), "dir": list(self.dir)},
            separators=(",", ":"),
        )


@dataclass
class IngestStats:
    records_read: int = 0
    records_kept: int = 0
    records_dropped_empty: int = 0
    packets_read: int = 0
    packets_kept: int = 0
    # share of flows with <= 100 packets, before and after zero-payload removal
    short_share_raw: float = 0.0
    short_share_filtered: float = 0.0
    class_histogram: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowDataset:
    records: list[FlowRecord]
    labels: list[str]
    stats: IngestStats | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        self._index = {name: i for i, name in enumerate(self.labels)}
        if len(self._index) != len(self.labels):
            raise DatasetError("duplicate class labels in label index")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def label_index(self) -> dict[str, int]:
        return dict(self._index)

    def class_id(self, app_label: str) -> int:
        return self._index[app_label]

    def targets(self) -> np.ndarray:
        return np.array([self._index[r.app_label] for r in self.records], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "FlowDataset":
        """Records at ``indices``; the label index is kept unchanged."""
        return FlowDataset([self.records[i] for i in indices], list(self.labels))

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _parse_line(obj, lineno: int) -> tuple[str, list[int], list[int], list[str]]:
    if not isinstance(obj, dict):
        raise DatasetError("record is not a JSON object", lineno)
    missing = [k for k in ("app", "ps", "iat_us", "dir") if k not in obj]
    if missing:
        raise DatasetError(f"missing field(s) {missing}", lineno)
    app, ps, iat, dirs = obj["app"], obj["ps"], obj["iat_us"], obj["dir"]
    if not isinstance(app, str) or not app:
        raise DatasetError("'app' must be a non-empty string", lineno)
    for name, seq in (("ps", ps), ("iat_us", iat), ("dir", dirs)):
        if not isinstance(seq, list):
            raise DatasetError(f"'{name}' must be a list", lineno)
    if not len(ps) == len(iat) == len(dirs):
        raise DatasetError(
            f"sequence lengths differ: ps={len(ps)} iat_us={len(iat)} dir={len(dirs)}", lineno
        )
    for name, seq in (("ps", ps), ("iat_us", iat)):
        if any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in seq):
            raise DatasetError(f"'{name}' must hold non-negative integers", lineno)
    if any(d not in DIRECTIONS for d in dirs):
        raise DatasetError("'dir' entries must be 'up' or 'down'", lineno)
    return app, ps, iat, dirs


def parse_jsonl(stream: IO[bytes] | IO[str] | bytes | str) -> FlowDataset:
    """Parse JSON-lines flow records, removing zero-payload packets.

    Packets with ``ps == 0`` are dropped from all three series together;
    records left without packets are dropped and counted in the stats.
    Class ids follow first appearance.
    """
    if isinstance(stream, (bytes, str)):
        stream = io.BytesIO(stream.encode() if isinstance(stream, str) else stream)
    stats = IngestStats()
    records: list[FlowRecord] = []
    labels: dict[str, int] = {}
    short_raw = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed JSON ({exc.msg})", lineno) from None
        app, ps, iat, dirs = _parse_line(obj, lineno)
        stats.records_read += 1
        stats.packets_read += len(ps)
        short_raw += len(ps) <= SERIES_LEN
        keep = [i for i, v in enumerate(ps) if v > 0]
        if not keep:
            stats.records_dropped_empty += 1
            continue
        records.append(
            FlowRecord(
                app,
                tuple(ps[i] for i in keep),
                tuple(iat[i] for i in keep),
                tuple(dirs[i] for i in keep),
            )
        )
        labels.setdefault(app, len(labels))
    if stats.records_read == 0:
        raise DatasetError("empty stream: no flow records")
    stats.records_kept = len(records)
    stats.packets_kept = sum(len(r) for r in records)
    stats.short_share_raw = short_raw / stats.records_read
    stats.short_share_filtered = (
        sum(len(r) <= SERIES_LEN for r in records) / len(records) if records else 0.0
    )
    stats.class_histogram = dict(Counter(r.app_label for r in records))
    if stats.records_dropped_empty:
        log.info("dropped %d records with no payload packets", stats.records_dropped_empty)
    return FlowDataset(records, list(labels), stats)


def load_jsonl(path: str | Path) -> FlowDataset:
    try:
        with open(path, "rb") as fh:
            return parse_jsonl(fh)
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class ClassGenerator:
    burst_len: int
    ps_mean: float
    ps_std: float
    iat_log_mean: float
    iat_log_std: float
    p_upstream: float


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-class packet generators.

    When ``classes`` is empty, ``n_classes`` generators are derived from
    ``seed`` by spreading each parameter over a fixed range on an
    independently shuffled grid, which keeps classes well apart.
    """

    n_classes: int
    flows_per_class: int
    seed: int
    classes: tuple[ClassGenerator, ...] = ()

    def validate(self) -> None:
        if self.n_classes < 2:
            raise SpecError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.flows_per_class < 1:
            raise SpecError(f"flows_per_class must be >= 1, got {self.flows_per_class}")
        if self.classes and len(self.classes) != self.n_classes:
            raise SpecError(f"{len(self.classes)} class generators for n_classes={self.n_classes}")
        for i, g in enumerate(self.classes):
            if g.burst_len < 1:
                raise SpecError(f"class {i}: burst_len must be >= 1")
            if not 0.0 <= g.p_upstream <= 1.0:
                raise SpecError(f"class {i}: p_upstream {g.p_upstream} not a probability")
            if g.ps_std < 0 or g.iat_log_std < 0:
                raise SpecError(f"class {i}: negative standard deviation")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        allowed = {"n_classes", "flows_per_class", "seed", "classes"}
        unknown = set(data) - allowed
        if unknown:
            raise SpecError(f"unknown synthetic spec key(s): {sorted(unknown)}")
        for key in ("n_classes", "flows_per_class", "seed"):
            if key not in data:
                raise SpecError(f"missing required key {key!r}")
        try:
            classes = tuple(ClassGenerator(**c) for c in data.get("classes") or ())
        except TypeError as exc:
            raise SpecError(f"bad class generator: {exc}") from None
        return cls(int(data["n_classes"]), int(data["flows_per_class"]), int(data["seed"]), classes)


# derived generators share a few burst lengths so that padding alone never
# identifies a class; the other parameters are spread on shuffled grids
_BURST_LEVELS = (8, 20, 45, 90)


def derive_generators(n_classes: int, seed: int) -> tuple[ClassGenerator, ...]:
    rng = np.random.default_rng((seed, 0x5EED))
    grid = (np.arange(n_classes) + 0.5) / n_classes

    def spread(lo, hi):
        return lo + (hi - lo) * rng.permutation(grid)

    burst = rng.permutation(np.resize(_BURST_LEVELS, n_classes))
    ps_mean = spread(80, 1300)
    iat_mu = spread(3.0, 11.0)
    p_up = spread(0.2, 0.8)
    return tuple(
        ClassGenerator(
            burst_len=int(burst[c]),
            ps_mean=float(ps_mean[c]),
            ps_std=float(0.25 * ps_mean[c] + 20),
            iat_log_mean=float(iat_mu[c]),
            iat_log_std=1.0,
            p_upstream=float(p_up[c]),
        )
        for c in range(n_classes)
    )


def generate_synthetic(spec: SyntheticSpec) -> FlowDataset:
    """Sample ``n_classes * flows_per_class`` flows; pure function of ``spec``."""
    spec.validate()
    gens = spec.classes or derive_generators(spec.n_classes, spec.seed)
    labels = [f"app{c:02d}" for c in range(spec.n_classes)]
    records = []
    for c, g in enumerate(gens):
        rng = np.random.default_rng((spec.seed, c))
        n = g.burst_len
        ps = np.clip(np.rint(rng.normal(g.ps_mean, g.ps_std, (spec.flows_per_class, n))), 1, PS_CEILING)
        iat = np.maximum(np.rint(rng.lognormal(g.iat_log_mean, g.iat_log_std, (spec.flows_per_class, n))), 1)
        up = rng.random((spec.flows_per_class, n)) < g.p_upstream
        for i in range(spec.flows_per_class):
            records.append(
                FlowRecord(
                    labels[c],
                    tuple(int(v) for v in ps[i]),
                    tuple(int(v) for v in iat[i]),
                    tuple("up" if u else "down" for u in up[i]),
                )
            )
    return FlowDataset(records, labels)


def merge_labels(base: Sequence[str], extra: Iterable[str]) -> list[str]:
    """Append unseen labels of ``extra`` to ``base`` preserving order."""
    out = list(base)
    seen = set(out)
    for name in extra:
        if name not in seen:
            out.append(name)
            seen.add(name)
    return out
