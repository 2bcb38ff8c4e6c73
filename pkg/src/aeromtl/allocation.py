"""Task allocation: split a dataset into k disjoint labeled subsets.

Two strategies are provided.  Binning slices one input dimension into
half-open intervals (the dimension's maximum closes the last bin so no row
is orphaned).  K-means clusters whole rows with Lloyd's algorithm and keeps
the per-iteration objective trace so monotonicity can be asserted exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDimensionError, InfeasibleError


@dataclass(frozen=True)
class PartitionRule:
    """Half-open equal-or-custom-width bins over one input dimension."""

    dimension_index: int
    bin_widths: np.ndarray
    lower: float
    upper: float

    @property
    def k(self) -> int:
        return len(self.bin_widths)

    def interior_edges(self) -> np.ndarray:
        return self.lower + np.cumsum(self.bin_widths)[:-1]

    def assign(self, values) -> np.ndarray:
        """Bin labels for raw values of the partition dimension."""
        v = np.atleast_1d(np.asarray(values, dtype=float))
        labels = np.searchsorted(self.interior_edges(), v, side="right")
        return np.clip(labels, 0, self.k - 1).astype(int)


@dataclass(frozen=True)
class KMeansModel:
    """Fitted centroids plus the objective trace Lloyd's algorithm followed.

    ``repair_starts`` holds trace indices where an empty-cluster reseed
    happened; the objective is non-increasing within each segment between
    them, but may jump upward across a repair.
    """

    centroids: np.ndarray
    inertia: float
    objective_trace: np.ndarray
    repair_starts: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return len(self.centroids)

    def assign(self, rows) -> np.ndarray:
        """Nearest-centroid labels for a matrix of rows (ties: lowest index)."""
        X = np.atleast_2d(np.asarray(rows, dtype=float))
        if X.shape[1] != self.centroids.shape[1]:
            raise ValueError(
                f"row width {X.shape[1]} != centroid width {self.centroids.shape[1]}")
        d2 = ((X[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1).astype(int)


@dataclass(frozen=True)
class Allocation:
    """Per-row subtask labels in {0..k-1} plus the rule that produced them."""

    labels: np.ndarray
    k: int
    provenance: PartitionRule | KMeansModel

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if lab.size and (lab.min() < 0 or lab.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")


def partition_by_dimension(data, dimension_index, k, widths=None, bounds=None) -> Allocation:
    """Label every row by binning one input dimension.

    Bins are left-closed half-open intervals covering [lower, upper);
    the default bounds are the dimension's min and max, and any value at
    or above the last interior edge (including the maximum itself) falls
    in the final bin.  ``widths`` must be positive and sum to the span.
    ``bounds`` overrides the (lower, upper) range when the rule should
    cover more than the observed values.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not (0 <= dimension_index < X.shape[1]):
        raise ValueError(f"dimension_index {dimension_index} out of range for width {X.shape[1]}")
    column = X[:, dimension_index]
    if bounds is None:
        lower, upper = float(column.min()), float(column.max())
    else:
        lower, upper = float(bounds[0]), float(bounds[1])
        if upper < lower:
            raise ValueError(f"bounds must satisfy lower <= upper, got ({lower}, {upper})")
    span = upper - lower
    if span == 0.0:
        if k > 1:
            raise DegenerateDimensionError(
                f"dimension {dimension_index} has zero span; cannot form {k} bins")
        rule = PartitionRule(dimension_index, np.zeros(1), lower, upper)
        return Allocation(np.zeros(len(X), dtype=int), 1, rule)

    if widths is None:
        w = np.full(k, span / k)
    else:
        w = np.asarray(widths, dtype=float)
        if w.shape != (k,):
            raise ValueError(f"expected {k} widths, got shape {w.shape}")
        if np.any(w <= 0):
            raise ValueError("bin widths must be positive")
        if abs(w.sum() - span) > 1e-9:
            raise ValueError(f"widths sum to {w.sum()}, expected the span {span}")
    rule = PartitionRule(dimension_index, w, lower, upper)
    return Allocation(rule.assign(column), k, rule)


def kmeans_fit(data, k, seed=0, max_iters=300, tol=1e-6,
               initial_centroids=None) -> KMeansModel:
    """Lloyd's algorithm with Forgy init (k distinct rows drawn by seed).

    Assignment uses squared Euclidean distance with lowest-index
    tie-breaking.  If an iteration empties a cluster, its centroid is
    reseeded at the point farthest from its currently assigned centroid
    and the trace records where the fresh segment starts.
    ``initial_centroids`` overrides the seeded init (warm starts, testing).
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    n = len(X)
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise InfeasibleError(f"cannot form {k} clusters from {n} rows")
    distinct = np.unique(X, axis=0)
    if len(distinct) < k:
        raise InfeasibleError(
            f"cannot form {k} clusters from {len(distinct)} distinct rows")

    if initial_centroids is not None:
        centroids = np.atleast_2d(np.asarray(initial_centroids, dtype=float)).copy()
        if centroids.shape != (k, X.shape[1]):
            raise ValueError(
                f"initial_centroids shape {centroids.shape} != {(k, X.shape[1])}")
    else:
        rng = np.random.default_rng(seed)
        centroids = distinct[rng.choice(len(distinct), size=k, replace=False)].copy()

    trace: list[float] = []
    repair_starts: list[int] = []
    rows = np.arange(n)
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        own = d2[rows, labels]
        trace.append(float(own.sum()))

        empty = sorted(set(range(k)) - set(np.unique(labels)))
        if empty:
            order = np.argsort(own)[::-1]
            used = 0
            for j in empty:
                centroids[j] = X[order[used]]
                used += 1
            repair_starts.append(len(trace))
            continue

        new_centroids = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
        shift = np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break

    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    inertia = float(d2[rows, labels].sum())
    trace.append(inertia)
    return KMeansModel(centroids, inertia, np.asarray(trace), tuple(repair_starts))


def kmeans_allocate(model: KMeansModel, data) -> Allocation:
    """Allocation of every row of ``data`` under a fitted model."""
    return Allocation(model.assign(data), model.k, model)


def kmeans_assign(model: KMeansModel, row) -> int:
    """Index of the centroid nearest to one row (ties: lowest index)."""
    r = np.asarray(row, dtype=float)
    if r.ndim != 1:
        raise ValueError("kmeans_assign expects a single row vector")
    return int(model.assign(r[None, :])[0])


def one_hot(label, k) -> np.ndarray:
    """Length-k indicator vector with a single 1 at ``label``."""
    label = int(label)
    k = int(k)
    if not (0 <= label < k):
        raise ValueError(f"label {label} out of range for k={k}")
    vec = np.zeros(k)
    vec[label] = 1.0
    return vec


def one_hot_rows(labels, k) -> np.ndarray:
    """(n, k) matrix of indicator rows."""
    lab = np.asarray(labels, dtype=int)
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    out = np.zeros((lab.size, k))
    out[np.arange(lab.size), lab] = 1.0
    return out
