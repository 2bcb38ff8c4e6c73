"""Metrics, region-stratified error analysis, and per-sample gate traces."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clusternet import ClusterNet, clusternet_forward, predict
from .datasets import NormalizedDataset
from .nn import MLP, forward


@dataclass(frozen=True)
class RegionMetrics:
    mse: float
    mae: float
    count: int


@dataclass(frozen=True)
class MetricsReport:
    """MSE/MAE over a sample set plus the same per named row region."""

    mse: float
    mae: float
    count: int
    regions: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mse": self.mse,
            "mae": self.mae,
            "count": self.count,
            "regions": {name: {"mse": r.mse, "mae": r.mae, "count": r.count}
                        for name, r in self.regions.items()},
        }


def _mse_mae(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), float(np.mean(np.abs(diff)))


def compute_metrics(predictions, targets, region_predicates=None,
                    region_values=None) -> MetricsReport:
    """MSE = mean((y - yhat)^2), MAE = mean(|y - yhat|), overall and per region.

    ``region_predicates`` maps a region name to a callable producing a row
    mask from ``region_values`` (default: the targets themselves; pass raw
    targets to stratify on physical scales).  A region that selects no rows
    is omitted from the report rather than reported as zero.
    """
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: predictions {p.shape} vs targets {t.shape}")
    if p.size == 0:
        raise ValueError("need at least one sample")
    if p.ndim == 1:
        p = p[:, None]
        t = t[:, None]
    mse, mae = _mse_mae(p, t)

    regions = {}
    if region_predicates:
        basis = t if region_values is None else np.asarray(region_values)
        if len(basis) != len(t):
            raise ValueError("region_values must have one row per sample")
        for name, predicate in region_predicates.items():
            mask = np.asarray(predicate(basis), dtype=bool)
            if mask.shape != (len(t),):
                raise ValueError(f"region {name!r} mask has shape {mask.shape}")
            if mask.any():
                r_mse, r_mae = _mse_mae(p[mask], t[mask])
                regions[name] = RegionMetrics(r_mse, r_mae, int(mask.sum()))
    return MetricsReport(mse, mae, len(t), regions)


def predict_rows(model, X, gate_mode="soft", threads=1) -> np.ndarray:
    """Predictions for a matrix of normalized rows; MLPs and ClusterNets alike.

    ``threads`` > 1 fans row chunks out over a thread pool; the model is
    only read, so this is safe, and row order is preserved.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if isinstance(model, MLP):
        run = lambda chunk: forward(model, chunk)  # noqa: E731
    elif isinstance(model, ClusterNet):
        run = lambda chunk: predict(model, chunk, gate_mode=gate_mode)  # noqa: E731
    else:
        raise TypeError(f"cannot predict with {type(model).__name__}")
    if threads <= 1 or len(X) < 2 * threads:
        return run(X)
    chunks = np.array_split(X, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(run, chunks))
    return np.vstack(parts)


@dataclass
class ActivationTrace:
    """Per-sample mixture internals: which gate fired for which input.

    Inputs and real/predicted targets are on raw (denormalized) scales;
    the per-cluster f and c values stay normalized, as trained.
    """

    ids: np.ndarray
    inputs_raw: np.ndarray
    real: np.ndarray
    predicted: np.ndarray
    f: np.ndarray
    c: np.ndarray
    activated: np.ndarray
    input_names: list[str]
    target_names: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def q(self) -> int:
        return self.c.shape[1]

    def column_names(self) -> list[str]:
        single = len(self.target_names) == 1
        names = ["id"] + list(self.input_names)
        for t in self.target_names:
            names.append("real" if single else f"real_{t}")
        for t in self.target_names:
            names.append("predicted" if single else f"predicted_{t}")
        for j in range(self.q):
            for t in self.target_names:
                names.append(f"f{j + 1}" if single else f"f{j + 1}_{t}")
            names.append(f"c{j + 1}")
        names.append("activated")
        return names

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.column_names())
            for i in range(len(self)):
                row = [int(self.ids[i])]
                row += [repr(float(v)) for v in self.inputs_raw[i]]
                row += [repr(float(v)) for v in self.real[i]]
                row += [repr(float(v)) for v in self.predicted[i]]
                for j in range(self.q):
                    row += [repr(float(v)) for v in self.f[i, j]]
                    row.append(repr(float(self.c[i, j])))
                row.append(int(self.activated[i]))
                writer.writerow(row)


def activation_trace(model: ClusterNet, dataset: NormalizedDataset,
                     rows=None) -> ActivationTrace:
    """Evaluate the mixture on the given rows and record every gate.

    ``rows`` are indices into the dataset (default: every row).  The
    activated cluster is the argmax gate, ties to the lowest index.
    """
    idx = np.arange(len(dataset)) if rows is None else np.asarray(rows, dtype=int)
    X = dataset.inputs[idx]
    y, f, c = clusternet_forward(model, X)
    return ActivationTrace(
        ids=idx,
        inputs_raw=dataset.raw_inputs(idx),
        real=dataset.raw_targets(idx),
        predicted=dataset.target_transform.denormalize(y),
        f=f,
        c=c,
        activated=np.argmax(c, axis=1),
        input_names=list(dataset.input_names),
        target_names=list(dataset.target_names),
    )


def gate_agreement(trace_or_activated, labels) -> float:
    """Fraction of rows whose argmax gate matches the allocation label."""
    activated = (trace_or_activated.activated
                 if isinstance(trace_or_activated, ActivationTrace)
                 else np.asarray(trace_or_activated))
    labels = np.asarray(labels)
    if activated.shape != labels.shape:
        raise ValueError("activated indices and labels disagree on length")
    return float(np.mean(activated == labels))


def dominant_cluster_by_bin(activated, labels) -> dict:
    """Per allocation bin: (most common activated cluster, its row share)."""
    activated = np.asarray(activated)
    labels = np.asarray(labels)
    out = {}
    for bin_id in np.unique(labels):
        acts = activated[labels == bin_id]
        winners, counts = np.unique(acts, return_counts=True)
        best = int(np.argmax(counts))
        out[int(bin_id)] = (int(winners[best]), float(counts[best] / len(acts)))
    return out


def export_prediction_grid(model, axes, dataset: NormalizedDataset, path,
                           oracle=None, gate_mode="soft", threads=1) -> np.ndarray:
    """Predict on a full cartesian grid of raw input values and write CSV.

    ``axes`` is one array of raw values per input dimension; rows are
    emitted in lexicographic order by those axes.  When ``oracle`` is given
    it is called with the raw input matrix and its values land in real_*
    columns next to the predictions.  Returns the raw grid inputs.
    """
    if len(axes) != dataset.input_width:
        raise ValueError(f"expected {dataset.input_width} axes, got {len(axes)}")
    arrays = [np.atleast_1d(np.asarray(a, dtype=float)) for a in axes]
    if any(a.size == 0 for a in arrays):
        raise ValueError("every grid axis needs at least one value")
    mesh = np.meshgrid(*arrays, indexing="ij")
    raw = np.column_stack([m.ravel() for m in mesh])

    normalized = dataset.input_transform.normalize(raw)
    pred = predict_rows(model, normalized, gate_mode=gate_mode, threads=threads)
    pred_raw = dataset.target_transform.denormalize(pred)
    real = None if oracle is None else np.asarray(oracle(raw), dtype=float)
    if real is not None and real.ndim == 1:
        real = real[:, None]

    single = len(dataset.target_names) == 1
    header = list(dataset.input_names)
    header += ["predicted" if single else f"predicted_{t}" for t in dataset.target_names]
    if real is not None:
        header += ["real" if single else f"real_{t}" for t in dataset.target_names]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(raw)):
            row = [repr(float(v)) for v in raw[i]]
            row += [repr(float(v)) for v in pred_raw[i]]
            if real is not None:
                row += [repr(float(v)) for v in real[i]]
            writer.writerow(row)
    return raw
