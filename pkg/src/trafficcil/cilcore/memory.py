"""Fixed-budget exemplar memory, herding selection and nearest-mean classification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..binfmt import FormatError, Reader, Writer, check_magic, dtype_code, dtype_from_code
from ..neural import Network, features

MEMORY_MAGIC = b"CILM"
MEMORY_VERSION = 1

# per-sample forward passes for herding/NMC are chunked via neural.features


def l2_normalize(f: np.ndarray) -> np.ndarray:
    """Row-wise unit vectors; all-zero rows stay zero."""
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    return f / np.where(norms > 0, norms, 1)


def herding_select(class_features: np.ndarray, m: int) -> list[int]:
    """Greedy herding order over one class's (normalized) feature vectors.

    Step ``k`` takes the unselected row minimizing
    ``|| mu - (sum(selected) + f_i) / k ||`` where ``mu`` is the class mean.
    Ties resolve to the lowest index. Returns ``min(m, n)`` indices.
    """
    f = np.asarray(class_features, dtype=np.float64)
    if f.ndim != 2 or len(f) == 0:
        raise ValueError("herding needs a non-empty (n, d) feature matrix")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    n = len(f)
    mu = f.mean(axis=0)
    acc = np.zeros_like(mu)
    available = np.ones(n, dtype=bool)
    order = []
    for k in range(1, min(m, n) + 1):
        dist = np.linalg.norm(mu - (acc + f) / k, axis=1)
        dist[~available] = np.inf
        i = int(np.argmin(dist))
        order.append(i)
        available[i] = False
        acc += f[i]
    return order


def class_quotas(budget: int, n_classes: int) -> list[int]:
    """``budget // C`` each, plus one for the first ``budget % C`` class ids."""
    base, extra = divmod(budget, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


@dataclass
class ExemplarMemory:
    """Per-class exemplar tensors kept in herding order.

    ``source_index[c]`` records, for each stored exemplar, its row in the
    training data it was herded from.
    """

    budget: int = 1000
    exemplars: dict[int, np.ndarray] = field(default_factory=dict)
    source_index: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ValueError(f"memory budget must be >= 1, got {self.budget}")

    @property
    def n_classes(self) -> int:
        return len(self.exemplars)

    @property
    def total(self) -> int:
        return int(sum(len(v) for v in self.exemplars.values()))

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in sorted(self.exemplars.items())}

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked exemplars and labels, ordered by class id then herding order."""
        if not self.exemplars:
            raise ValueError("memory is empty")
        classes = sorted(self.exemplars)
        x = np.concatenate([self.exemplars[c] for c in classes])
        y = np.concatenate([np.full(len(self.exemplars[c]), c, dtype=np.int64) for c in classes])
        return x, y

    def truncated(self, quotas: list[int]) -> "ExemplarMemory":
        return ExemplarMemory(
            self.budget,
            {c: v[: quotas[c]].copy() for c, v in self.exemplars.items()},
            {c: v[: quotas[c]].copy() for c, v in self.source_index.items()},
        )


def rebuild_memory(
    mem: ExemplarMemory,
    net: Network,
    new_x: np.ndarray,
    new_y: np.ndarray,
    n_classes: int,
) -> ExemplarMemory:
    """Shrink old classes to the new quota and herd exemplars for new ones.

    Old-class lists keep the prefix of their herding order. New classes
    ``mem.n_classes .. n_classes - 1`` are selected from ``new_x`` using the
    (normalized) features of ``net``.
    """
    old = mem.n_classes
    if n_classes == old:
        return mem
    if n_classes < old:
        raise ValueError(f"cannot shrink memory from {old} to {n_classes} classes")
    if mem.budget < n_classes:
        raise ValueError(
            f"memory budget {mem.budget} gives a zero quota for {n_classes} classes"
        )
    if sorted(mem.exemplars) != list(range(old)):
        raise ValueError("memory classes are not the dense range 0..C-1")
    new_y = np.asarray(new_y)
    quotas = class_quotas(mem.budget, n_classes)
    out = mem.truncated(quotas)
    feats = l2_normalize(features(net, new_x)) if len(new_x) else None
    for c in range(old, n_classes):
        rows = np.flatnonzero(new_y == c)
        if len(rows) == 0:
            raise ValueError(f"no training samples for new class {c}")
        order = np.asarray(herding_select(feats[rows], quotas[c]), dtype=np.int64)
        out.exemplars[c] = np.ascontiguousarray(new_x[rows[order]])
        out.source_index[c] = rows[order]
    return out


def build_memory(net: Network, x: np.ndarray, y: np.ndarray, budget: int, n_classes: int) -> ExemplarMemory:
    return rebuild_memory(ExemplarMemory(budget), net, x, y, n_classes)


@dataclass(frozen=True)
class Centroids:
    means: np.ndarray  # (C, d), unit rows

    @property
    def n_classes(self) -> int:
        return len(self.means)


def compute_centroids(mem: ExemplarMemory, net: Network) -> Centroids:
    """Normalized mean of normalized exemplar features, per class."""
    if mem.n_classes == 0:
        raise ValueError("memory is empty")
    rows = []
    for c in range(mem.n_classes):
        ex = mem.exemplars.get(c)
        if ex is None or len(ex) == 0:
            raise ValueError(f"class {c} has no exemplars")
        mean = l2_normalize(features(net, ex).astype(np.float64)).mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError(f"class {c}: mean exemplar feature is zero, centroid undefined")
        rows.append(mean / norm)
    return Centroids(np.stack(rows))


def nmc_classify(feats: np.ndarray, cents: Centroids, chunk: int = 256) -> np.ndarray:
    """Nearest centroid in Euclidean distance; ties go to the lowest class id."""
    if cents.n_classes == 0:
        raise ValueError("no centroids")
    feats = np.asarray(feats, dtype=np.float64)
    out = np.empty(len(feats), dtype=np.int64)
    for s in range(0, len(feats), chunk):
        diff = feats[s : s + chunk, None, :] - cents.means[None, :, :]
        out[s : s + chunk] = np.argmin(np.sqrt((diff * diff).sum(axis=2)), axis=1)
    return out


# ---------------------------------------------------------------------------
# serialization: "CILM" | version u32 | dtype width u8 | budget u32 | n_classes u32
#                | channels u32 | length u32, then per class:
#                class id u32 | count u32 | source indices i64[count] | tensors


def save_memory(mem: ExemplarMemory, path) -> None:
    classes = sorted(mem.exemplars)
    sample = mem.exemplars[classes[0]] if classes else np.zeros((0, 3, 100), np.float32)
    _, ch, length = sample.shape
    dtype = sample.dtype
    with open(path, "wb") as fh:
        w = Writer(fh)
        fh.write(MEMORY_MAGIC)
        w.pack("IBIIII", MEMORY_VERSION, dtype_code(dtype), mem.budget, len(classes), ch, length)
        for c in classes:
            ex = mem.exemplars[c]
            w.pack("II", c, len(ex))
            w.array(mem.source_index[c], "<i8")
            w.array(ex, dtype)


def load_memory(path) -> ExemplarMemory:
    with open(path, "rb") as fh:
        r = Reader(fh)
        check_magic(r, MEMORY_MAGIC, MEMORY_VERSION)
        width, budget, n_classes, ch, length = r.unpack("BIIII")
        dtype = dtype_from_code(width)
        exemplars, sources = {}, {}
        for _ in range(n_classes):
            c, count = r.unpack("II")
            if c in exemplars:
                raise FormatError(f"duplicate class {c} in memory file")
            sources[c] = r.array((count,), "<i8")
            exemplars[c] = r.array((count, ch, length), dtype)
        r.expect_eof()
    return ExemplarMemory(budget, exemplars, sources)
