"""Descriptive statistics: feature-vs-p-value correlations and
neighborhood-density summaries of a location set."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as _scipy_stats

from .geo import GeoPoint, haversine_km


@dataclass
class CorrelationRow:
    pearson: float | None
    spearman: float | None
    kendall: float | None


def correlation_table(
    features: dict[str, np.ndarray], pvalues: np.ndarray
) -> dict[str, CorrelationRow]:
    """Pearson, Spearman, and Kendall tau-b of each feature column against
    the p-values; a constant column's coefficients are undefined (None)."""
    pvalues = np.asarray(pvalues, dtype=float)
    if pvalues.size < 3:
        raise ValueError(f"need >= 3 rows, got {pvalues.size}")
    out: dict[str, CorrelationRow] = {}
    for name, column in features.items():
        column = np.asarray(column, dtype=float)
        if column.size != pvalues.size:
            raise ValueError(f"feature {name!r} has {column.size} rows")
        if np.ptp(column) == 0.0 or np.ptp(pvalues) == 0.0:
            out[name] = CorrelationRow(None, None, None)
            continue
        out[name] = CorrelationRow(
            pearson=float(_scipy_stats.pearsonr(column, pvalues).statistic),
            spearman=float(_scipy_stats.spearmanr(column, pvalues).statistic),
            kendall=float(_scipy_stats.kendalltau(column, pvalues).statistic),
        )
    return out


@dataclass
class DensityStats:
    """Brute-force neighborhood statistics over a point set."""

    knn_km: np.ndarray  # (n, k) sorted distances to the k nearest others
    mean_knn_km: np.ndarray  # (n,) per-point mean over the k nearest
    neighbor_counts: np.ndarray  # (n,) others within the radius
    radius_m: float

    def count_ccdf(self) -> list[tuple[int, float]]:
        """(threshold, fraction of points with count >= threshold) rows."""
        n = self.neighbor_counts.size
        return [
            (c, float((self.neighbor_counts >= c).sum()) / n)
            for c in range(int(self.neighbor_counts.max()) + 2)
        ]


def knn_density(points: list[GeoPoint], k: int, radius_m: float) -> DensityStats:
    n = len(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise ValueError(f"k={k} needs at least k+1={k + 1} points, got {n}")
    if radius_m < 0:
        raise ValueError("radius must be >= 0")
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = haversine_km(points[i], points[j])
    np.fill_diagonal(d, math.inf)
    sorted_d = np.sort(d, axis=1)
    knn = sorted_d[:, :k]
    counts = (d <= radius_m / 1000.0).sum(axis=1)
    return DensityStats(
        knn_km=knn,
        mean_knn_km=knn.mean(axis=1),
        neighbor_counts=counts.astype(int),
        radius_m=radius_m,
    )
