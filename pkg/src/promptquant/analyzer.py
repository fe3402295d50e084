"""Weight-distribution diagnostics over training snapshot series.

Histograms, per-snapshot variance, inter-snapshot KL divergence, and outlier
counts; everything emits plain arrays so the CLI can write CSV for plotting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTensor, EmptyTensor, LengthMismatch, NonPositive
from .quantizer import Codebook, WeightTensor, compute_stats
from .scheduler import index_distribution, kl_divergence

DEFAULT_KLD_BINS = 64


@dataclass(frozen=True)
class SnapshotSeries:
    """Ordered weight snapshots (one per epoch or step) with integer labels."""

    snapshots: list[WeightTensor]
    labels: list[int]

    def __post_init__(self):
        if not self.snapshots:
            raise EmptyTensor("snapshot series is empty")
        if len(self.labels) != len(self.snapshots):
            raise LengthMismatch("labels and snapshots lengths differ")
        n = self.snapshots[0].count
        if any(s.count != n for s in self.snapshots):
            raise LengthMismatch("all snapshots must have the same element count")
        if any(b <= a for a, b in zip(self.labels, self.labels[1:])):
            raise NonPositive("labels must be strictly increasing")


def histogram(w: WeightTensor, bins: int, range_: tuple[float, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-bin counts plus edges; counts always sum to N.

    Bins are half-open [edge_i, edge_{i+1}) except the last, which is closed.
    Values outside an explicit range are counted into the boundary bins.
    """
    if bins < 1:
        raise NonPositive(f"bins must be >= 1, got {bins}")
    v = w.values
    if v.size == 0:
        raise EmptyTensor("cannot histogram an empty tensor")
    if range_ is None:
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            hi = lo + 1.0
    else:
        lo, hi = float(range_[0]), float(range_[1])
        if not lo < hi:
            raise NonPositive(f"histogram range must satisfy lo < hi, got [{lo}, {hi}]")
        v = np.clip(v, lo, hi)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return counts, edges


def variance_trend(s: SnapshotSeries) -> np.ndarray:
    """Population variance of each snapshot, in series order."""
    return np.array([float(np.var(snap.values)) for snap in s.snapshots])


def _bin_distribution(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=bins, range=(lo, hi))
    return counts / values.size


def epoch_kld_trend(
    s: SnapshotSeries,
    bins: int = DEFAULT_KLD_BINS,
    codebook: Codebook | None = None,
) -> np.ndarray:
    """KL(dist(snapshot k+1) || dist(snapshot k)) for each adjacent pair.

    By default each pair is binned into ``bins`` uniform cells spanning the
    union of the two snapshots' ranges.  With ``codebook`` given, the event
    space is that codebook's index distribution instead, matching the
    scheduler's re-cluster test exactly.
    """
    if len(s.snapshots) < 2:
        raise LengthMismatch("need at least two snapshots for a KLD trend")
    out = []
    for prev, cur in zip(s.snapshots, s.snapshots[1:]):
        if codebook is not None:
            p_prev = index_distribution(prev, codebook)
            p_cur = index_distribution(cur, codebook)
        else:
            lo = min(float(prev.values.min()), float(cur.values.min()))
            hi = max(float(prev.values.max()), float(cur.values.max()))
            if lo == hi:
                hi = lo + 1.0
            p_prev = _bin_distribution(prev.values, lo, hi, bins)
            p_cur = _bin_distribution(cur.values, lo, hi, bins)
        out.append(kl_divergence(p_cur, p_prev))
    return np.array(out)


def outlier_stats(w: WeightTensor, k: float) -> tuple[int, float]:
    """Count and fraction of values strictly beyond mu +- k*sigma."""
    stats = compute_stats(w)
    if stats.sigma == 0:
        raise DegenerateTensor("sigma is 0: outlier band undefined")
    outside = np.abs(w.values - stats.mu) > k * stats.sigma
    count = int(outside.sum())
    return count, count / w.count
