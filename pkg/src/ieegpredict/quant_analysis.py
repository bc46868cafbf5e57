"""Exploratory statistics on raw iEEG samples.

Boxplot summaries, PCA explained variance, channel correlation, sensor
clustering, train/test distribution shift and z-score outliers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster import hierarchy
from scipy.spatial.distance import squareform


class ZeroVarianceError(ValueError):
    def __init__(self, channel: int):
        super().__init__(f"channel {channel} has zero variance")
        self.channel = channel


@dataclass(frozen=True)
class FiveNumberSummary:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    iqr: float
    lower_fence: float
    upper_fence: float
    outlier_count: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PcaResult:
    eigenvalues: np.ndarray
    explained_ratio: np.ndarray
    cumulative_ratio: np.ndarray
    components: np.ndarray  # features x components, columns orthonormal
    mean: np.ndarray


@dataclass(frozen=True)
class Dendrogram:
    # (cluster_a, cluster_b, distance, size); new clusters are numbered n, n+1, ...
    merges: list[tuple[int, int, float, int]]
    leaf_order: list[int]

    @property
    def n_leaves(self) -> int:
        return len(self.merges) + 1

    def merge_members(self) -> list[frozenset[int]]:
        """Leaf set formed by each merge, in merge order."""
        members = {i: frozenset([i]) for i in range(self.n_leaves)}
        out = []
        for step, (a, b, _, _) in enumerate(self.merges):
            members[self.n_leaves + step] = members[a] | members[b]
            out.append(members[self.n_leaves + step])
        return out


def summarize_channel(samples) -> FiveNumberSummary:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("summarize_channel needs at least one sample")
    q1, median, q3 = np.percentile(x, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return FiveNumberSummary(
        min=float(x.min()),
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        max=float(x.max()),
        iqr=float(iqr),
        lower_fence=float(lo),
        upper_fence=float(hi),
        outlier_count=int(np.count_nonzero((x < lo) | (x > hi))),
    )


def _as_finite_matrix(data, min_rows: int) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an (observations x features) matrix, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} observations, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite entries")
    return x


def pca(data) -> PcaResult:
    """PCA from the sample covariance (n - 1 normalization), computed by SVD."""
    x = _as_finite_matrix(data, 2)
    n, p = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    # vt must be square (p x p); only wide data needs the full factorization
    _, s, vt = np.linalg.svd(centered, full_matrices=n < p)
    eig = np.zeros(p)
    eig[: s.size] = s**2 / (n - 1)
    components = vt.T
    # sign convention: largest-magnitude loading of each component is positive
    flip = np.sign(components[np.argmax(np.abs(components), axis=0), np.arange(p)])
    flip[flip == 0] = 1.0
    components = components * flip
    total = eig.sum()
    if total > 0:
        ratio = eig / total
    else:
        ratio = np.full(p, 1.0 / p)
    cumulative = np.cumsum(ratio)
    cumulative[-1] = 1.0
    return PcaResult(eig, ratio, cumulative, components, mean)


def min_components_for_variance(result: PcaResult, threshold: float = 0.95) -> int:
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    # tolerance absorbs rounding in the cumulative sum
    hits = np.flatnonzero(result.cumulative_ratio >= threshold - 1e-12)
    return int(hits[0]) + 1


def correlation_matrix(data) -> np.ndarray:
    """Pearson correlations between columns (channels)."""
    x = _as_finite_matrix(data, 2)
    centered = x - x.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centered, centered))
    for ch, norm in enumerate(norms):
        if norm == 0:
            raise ZeroVarianceError(ch)
    z = centered / norms
    corr = z.T @ z
    corr = np.clip((corr + corr.T) / 2, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def cluster_sensors(corr) -> Dendrogram:
    """Average-linkage agglomerative clustering on the distance 1 - corr."""
    corr = np.asarray(corr, dtype=np.float64)
    n = corr.shape[0]
    if n == 1:
        return Dendrogram([], [0])
    dist = np.clip(1.0 - corr, 0.0, None)
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0.0)
    z = hierarchy.linkage(squareform(dist, checks=False), method="average")
    merges = [(int(a), int(b), float(d), int(size)) for a, b, d, size in z]
    return Dendrogram(merges, [int(i) for i in hierarchy.leaves_list(z)])


def distribution_shift(train, test) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_train - F_test|."""
    a = np.sort(np.asarray(train, dtype=np.float64).ravel())
    b = np.sort(np.asarray(test, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("distribution_shift needs two nonempty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def detect_outliers(data, z_threshold: float) -> list[tuple[int, int, float]]:
    """Entries whose per-channel z-score magnitude exceeds z_threshold.

    Returns (observation, channel, z) triples in row-major order.
    """
    if not z_threshold > 0:
        raise ValueError(f"z_threshold must be positive, got {z_threshold}")
    x = _as_finite_matrix(data, 1)
    std = x.std(axis=0)
    for ch, s in enumerate(std):
        if s == 0:
            raise ZeroVarianceError(ch)
    z = (x - x.mean(axis=0)) / std
    rows, cols = np.nonzero(np.abs(z) > z_threshold)
    return [(int(r), int(c), float(z[r, c])) for r, c in zip(rows, cols)]


def analyze_samples(samples_by_label: dict[str, np.ndarray], z_threshold: float = 6.0,
                    variance_threshold: float = 0.95) -> dict:
    """Full exploratory report for one patient.

    ``samples_by_label`` maps a class name to a (channels x samples) array
    pooled from that class's clips.
    """
    report = {}
    for name, x in samples_by_label.items():
        obs = np.asarray(x, dtype=np.float64).T
        result = pca(obs)
        corr = correlation_matrix(obs)
        tree = cluster_sensors(corr)
        outliers = detect_outliers(obs, z_threshold)
        report[name] = {
            "n_samples": int(obs.shape[0]),
            "boxplot": [summarize_channel(obs[:, c]).to_dict() for c in range(obs.shape[1])],
            "pca": {
                "eigenvalues": result.eigenvalues.tolist(),
                "explained_ratio": result.explained_ratio.tolist(),
                "cumulative_ratio": result.cumulative_ratio.tolist(),
                "components_for_variance": min_components_for_variance(result, variance_threshold),
                "variance_threshold": variance_threshold,
            },
            "correlation": corr.tolist(),
            "dendrogram": {
                "merges": [list(m) for m in tree.merges],
                "leaf_order": tree.leaf_order,
            },
            "outliers": {
                "z_threshold": z_threshold,
                "count": len(outliers),
                "entries": [list(o) for o in outliers[:1000]],
            },
        }
    return report
