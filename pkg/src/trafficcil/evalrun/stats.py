"""Per-class, per-position series statistics (heatmap view of a dataset)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..dataio import FlowDataset
from ..features import DIR, IAT, PS, NormStats, dataset_arrays, pad_mask


@dataclass
class HeatmapStats:
    labels: list[str]
    ps_mean: np.ndarray  # (C, L)
    iat_mean: np.ndarray
    dir_mean: np.ndarray
    pad_prob: np.ndarray
    counts: np.ndarray  # flows per class

    def row_order(self) -> list[int]:
        """Classes sorted by total padding probability, least padded first."""
        return sorted(range(len(self.labels)), key=lambda c: (self.pad_prob[c].sum(), c))

    def rows(self, sort: bool = True):
        order = self.row_order() if sort else range(len(self.labels))
        for c in order:
            for p in range(self.ps_mean.shape[1]):
                yield (
                    self.labels[c], p,
                    float(self.ps_mean[c, p]), float(self.iat_mean[c, p]),
                    float(self.dir_mean[c, p]), float(self.pad_prob[c, p]),
                )

    def write_csv(self, path, sort: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "position", "ps_mean", "iat_mean", "dir_mean", "pad_prob"])
            w.writerows(self.rows(sort))


def heatmap_stats(ds: FlowDataset, stats: NormStats) -> HeatmapStats:
    if len(ds) == 0:
        raise ValueError("heatmap statistics need a non-empty dataset")
    x, y = dataset_arrays(ds, stats)
    pad = pad_mask(x)
    n_classes = ds.n_classes
    shape = (n_classes, x.shape[2])
    out = {k: np.zeros(shape) for k in ("ps", "iat", "dir", "pad")}
    counts = np.bincount(y, minlength=n_classes)
    for c in range(n_classes):
        rows = y == c
        if not rows.any():
            continue
        xc = x[rows].astype(np.float64)
        out["ps"][c] = xc[:, PS].mean(axis=0)
        out["iat"][c] = xc[:, IAT].mean(axis=0)
        out["dir"][c] = xc[:, DIR].mean(axis=0)
        out["pad"][c] = pad[rows].mean(axis=0)
    return HeatmapStats(list(ds.labels), out["ps"], out["iat"], out["dir"], out["pad"], counts)
