"""Dataset generation, loading, normalization, and splitting.

The shockwave benchmark is generated from the exact viscous traveling-wave
solution of the 1-D equation  u_t + u u_x = v u_xx:

    u(t, x; v) = (uL + uR)/2 - (uL - uR)/2 * tanh((uL - uR)(x - x0 - s t)/(4 v))

with wave speed s = (uL + uR)/2.  A Crank-Nicolson / upwind finite-difference
solver is provided as an independent numerical cross-check of the generator.
External CFD tables (cylinder surface data) are loaded from schema-checked
CSV files; no flow solver is run here.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from .allocation import Allocation
from .errors import NumericError, ParseError, SchemaError

GENERATOR_VERSION = 1

# Default wave parameters.  The offset places the wave front far left of the
# sampled window at early times, so high-velocity rows stay scarce (<15% of
# the grid) while the full velocity range is still covered at late times.
DEFAULT_U_LEFT = 5.0
DEFAULT_U_RIGHT = 0.0
DEFAULT_SHOCK_OFFSET = -8.0


def axis_values(start, stop, step) -> np.ndarray:
    """Inclusive uniform grid; (stop - start) must be an integer multiple of step."""
    if not (step > 0):
        raise ValueError(f"step must be positive, got {step}")
    count = (stop - start) / step
    if abs(count - round(count)) > 1e-9:
        raise ValueError(f"range [{start}, {stop}] is not a multiple of step {step}")
    n = int(round(count)) + 1
    return np.round(np.linspace(start, stop, n), 12)


@dataclass(frozen=True)
class BurgersConfig:
    """Grid ranges (start, stop, step) per input plus wave parameters."""

    t_range: tuple[float, float, float] = (0.2, 4.8, 0.2)
    x_range: tuple[float, float, float] = (0.2, 4.8, 0.2)
    v_range: tuple[float, float, float] = (0.2, 4.8, 0.2)
    u_left: float = DEFAULT_U_LEFT
    u_right: float = DEFAULT_U_RIGHT
    shock_offset: float = DEFAULT_SHOCK_OFFSET

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = axis_values(*self.t_range)
        x = axis_values(*self.x_range)
        v = axis_values(*self.v_range)
        if np.any(v <= 0):
            raise ValueError("viscosity grid must be strictly positive")
        return t, x, v

    def to_dict(self) -> dict:
        return {
            "t_range": list(self.t_range),
            "x_range": list(self.x_range),
            "v_range": list(self.v_range),
            "u_left": self.u_left,
            "u_right": self.u_right,
            "shock_offset": self.shock_offset,
        }


def traveling_wave(t, x, v, u_left=DEFAULT_U_LEFT, u_right=DEFAULT_U_RIGHT,
                   shock_offset=DEFAULT_SHOCK_OFFSET):
    """Exact tanh-front solution; vectorizes over any broadcastable t, x, v."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    speed = 0.5 * (u_left + u_right)
    theta = (u_left - u_right) * (x - shock_offset - speed * t) / (4.0 * v)
    return 0.5 * (u_left + u_right) - 0.5 * (u_left - u_right) * np.tanh(theta)


@dataclass
class RawDataset:
    """Immutable-by-convention table of input rows and target rows."""

    inputs: np.ndarray
    targets: np.ndarray
    input_names: list[str]
    target_names: list[str]

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets disagree on row count")

    def __len__(self) -> int:
        return len(self.inputs)


def generate_burgers(config: BurgersConfig = BurgersConfig()) -> RawDataset:
    """Full (t, x, v) grid with exact wave velocities as targets.

    Rows are ordered lexicographically by (t, x, v).  With the default
    24-value axes this yields 24**3 = 13824 rows.
    """
    t_axis, x_axis, v_axis = config.axes()
    t, x, v = np.meshgrid(t_axis, x_axis, v_axis, indexing="ij")
    u = traveling_wave(t, x, v, config.u_left, config.u_right, config.shock_offset)
    inputs = np.column_stack([t.ravel(), x.ravel(), v.ravel()])
    return RawDataset(inputs, u.ravel()[:, None], ["t", "x", "v"], ["u"])


def burgers_pde_residual(t, x, v, config: BurgersConfig = BurgersConfig(),
                         h: float = 1e-4) -> np.ndarray:
    """Central-difference residual of u_t + u u_x - v u_xx for the exact wave.

    Derivatives are taken of the analytic solution with step ``h``, so the
    residual measures how exactly the generated field satisfies the PDE,
    independent of the sampling grid's coarse spacing.
    """
    def u_at(tt, xx):
        return traveling_wave(tt, xx, v, config.u_left, config.u_right,
                              config.shock_offset)

    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    u = u_at(t, x)
    u_t = (u_at(t + h, x) - u_at(t - h, x)) / (2.0 * h)
    u_x = (u_at(t, x + h) - u_at(t, x - h)) / (2.0 * h)
    u_xx = (u_at(t, x + h) - 2.0 * u + u_at(t, x - h)) / (h * h)
    return u_t + u * u_x - np.asarray(v, dtype=float) * u_xx


def solve_burgers_numerical(initial_condition, v, t_grid, x_grid,
                            boundary=None, cfl=0.5, growth_factor=10.0) -> np.ndarray:
    """March u_t + u u_x = v u_xx with Crank-Nicolson diffusion, upwind advection.

    ``initial_condition`` is a callable on x_grid or an array of values at
    t_grid[0]; ``boundary`` maps a time to (left, right) Dirichlet values and
    defaults to freezing the initial endpoints.  The internal step honours
    u_max * dt / dx <= cfl, re-estimated between reporting times.  Returns the
    field at every t_grid entry, shape (len(t_grid), len(x_grid)).  Raises
    NumericError if the field grows beyond ``growth_factor`` times its
    initial magnitude.
    """
    if not (v > 0):
        raise ValueError(f"viscosity must be positive, got {v}")
    if not (cfl > 0):
        raise ValueError(f"cfl must be positive, got {cfl}")
    x = np.asarray(x_grid, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if x.ndim != 1 or len(x) < 3:
        raise ValueError("x_grid must be a 1-D grid with at least 3 points")
    dx = x[1] - x[0]
    if not np.allclose(np.diff(x), dx, rtol=0, atol=1e-9 * max(1.0, abs(dx))):
        raise ValueError("x_grid must be uniformly spaced")
    if t.ndim != 1 or len(t) < 1 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")

    u0 = np.asarray(initial_condition(x) if callable(initial_condition)
                    else initial_condition, dtype=float)
    if u0.shape != x.shape:
        raise ValueError("initial condition does not match x_grid")
    if boundary is None:
        frozen = (float(u0[0]), float(u0[-1]))
        boundary = lambda _t: frozen  # noqa: E731

    bound = growth_factor * (1.0 + float(np.abs(u0).max()))
    out = np.empty((len(t), len(x)))
    out[0] = u0
    u = u0.copy()
    n_int = len(x) - 2

    for i in range(1, len(t)):
        span = t[i] - t[i - 1]
        u_max = max(float(np.abs(u).max()), 1e-12)
        n_sub = max(1, math.ceil(span * u_max / (cfl * dx)))
        dt = span / n_sub
        # (I - r*D) on interior nodes, r = v*dt/(2*dx^2), as a banded matrix.
        r = 0.5 * v * dt / (dx * dx)
        ab = np.zeros((3, n_int))
        ab[0, 1:] = -r
        ab[1, :] = 1.0 + 2.0 * r
        ab[2, :-1] = -r
        for s in range(n_sub):
            left, right = boundary(t[i - 1] + (s + 1) * dt)
            ui = u[1:-1]
            back = (u[1:-1] - u[:-2]) / dx
            fwd = (u[2:] - u[1:-1]) / dx
            adv = ui * np.where(ui >= 0.0, back, fwd)
            lap = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (dx * dx)
            rhs = ui + dt * (-adv) + 0.5 * v * dt * lap
            rhs[0] += r * left
            rhs[-1] += r * right
            interior = solve_banded((1, 1), ab, rhs)
            u = np.concatenate([[left], interior, [right]])
            if not np.all(np.isfinite(u)) or np.abs(u).max() > bound:
                raise NumericError(
                    f"numerical solution grew beyond {bound:.3g}", iteration=i)
        out[i] = u
    return out


# -- CSV tables -------------------------------------------------------------

@dataclass(frozen=True)
class TableSchema:
    """Column roles for an external table; ranges are warn-only checks."""

    inputs: tuple[str, ...]
    targets: tuple[str, ...]
    ranges: dict = field(default_factory=dict)


# Cylinder surface-flow table layout: position, Mach number, and the
# pressure/friction quantities computed by an external CFD solver.
CYLINDER_SCHEMA = TableSchema(
    inputs=("x", "y", "Ma"),
    targets=("P", "Cp", "Fx", "Fy"),
    ranges={"x": (0.1, 1.0), "y": (-0.5, 0.5), "Ma": (0.1, 0.24)},
)


def load_table(path, schema: TableSchema) -> RawDataset:
    """Read a headed CSV into a RawDataset, checking the schema.

    Missing columns raise SchemaError; cells that do not parse as finite
    reals raise ParseError naming the row and column.  Values outside the
    schema's declared ranges only warn.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        wanted = list(schema.inputs) + list(schema.targets)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        col_idx = {c: header.index(c) for c in wanted}

        rows = []
        for r, record in enumerate(reader):
            values = []
            for c in wanted:
                cell = record[col_idx[c]] if col_idx[c] < len(record) else ""
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: cannot parse {cell!r} at row {r + 2}, column {c!r}") from None
                if not np.isfinite(val):
                    raise ParseError(
                        f"{path}: non-finite value at row {r + 2}, column {c!r}")
                values.append(val)
            rows.append(values)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    n_in = len(schema.inputs)
    for name, (lo, hi) in schema.ranges.items():
        col = data[:, wanted.index(name)]
        outside = int(((col < lo) | (col > hi)).sum())
        if outside:
            warnings.warn(
                f"{path}: {outside} value(s) in column {name!r} outside [{lo}, {hi}]",
                stacklevel=2)
    return RawDataset(data[:, :n_in], data[:, n_in:],
                      list(schema.inputs), list(schema.targets))


def save_table(dataset: RawDataset, path) -> None:
    """Write a RawDataset as headed CSV; floats use repr so they re-parse exactly."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.input_names + dataset.target_names)
        for xin, tout in zip(dataset.inputs, dataset.targets):
            writer.writerow([repr(float(v)) for v in xin] + [repr(float(v)) for v in tout])


def synthesize_cylinder_table(rows=6000, seed=0) -> RawDataset:
    """Synthetic stand-in for the CFD cylinder table (same schema, made-up physics).

    Inputs are drawn uniformly from the schema ranges; outputs are smooth
    functions of position and Mach number with a sharp high-pressure region
    near the leading edge, so the table shows the same scarce-extreme
    character as real surface data.  For pipeline exercises only.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, rows)
    y = rng.uniform(-0.5, 0.5, rows)
    ma = rng.uniform(0.1, 0.24, rows)
    r2 = (x - 0.1) ** 2 / 0.04 + y ** 2 / 0.09
    stagnation = np.exp(-r2)
    cp = 2.0 * stagnation * (1.0 + 2.0 * ma) - 0.8 * np.sin(np.pi * x) * (1.0 - stagnation)
    p = 1.0 + 0.7 * ma ** 2 * cp
    fx = 0.05 * (1.0 - x) * np.cos(2.0 * np.pi * y) * (1.0 + ma) + 0.02 * stagnation
    fy = 0.04 * np.sin(2.0 * np.pi * y) * (1.0 - 0.5 * x) * (1.0 + ma)
    inputs = np.column_stack([x, y, ma])
    targets = np.column_stack([p, cp, fx, fy])
    return RawDataset(inputs, targets, list(CYLINDER_SCHEMA.inputs),
                      list(CYLINDER_SCHEMA.targets))


# -- normalization and splitting --------------------------------------------

@dataclass(frozen=True)
class ColumnTransform:
    """Per-column min-max scaling fitted on the training split only.

    Columns that are constant on the training split are flagged degenerate:
    they normalize to 0 and denormalize back to the constant.
    """

    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        return self.maximum == self.minimum

    def normalize(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        span = np.where(self.degenerate, 1.0, self.maximum - self.minimum)
        out = (v - self.minimum) / span
        return np.where(self.degenerate, 0.0, out)

    def denormalize(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        span = np.where(self.degenerate, 0.0, self.maximum - self.minimum)
        return v * span + self.minimum


@dataclass
class NormalizedDataset:
    """Normalized rows (original order) plus transforms and split indices."""

    inputs: np.ndarray
    targets: np.ndarray
    input_transform: ColumnTransform
    target_transform: ColumnTransform
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    input_names: list[str]
    target_names: list[str]
    labels: np.ndarray | None = None
    allocation: Allocation | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def input_width(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_width(self) -> int:
        return self.targets.shape[1]

    def split(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]

    def raw_inputs(self, idx=None) -> np.ndarray:
        rows = self.inputs if idx is None else self.inputs[idx]
        return self.input_transform.denormalize(rows)

    def raw_targets(self, idx=None) -> np.ndarray:
        rows = self.targets if idx is None else self.targets[idx]
        return self.target_transform.denormalize(rows)

    def attach_allocation(self, allocation: Allocation) -> None:
        if len(allocation.labels) != len(self):
            raise ValueError("allocation labels do not cover every row")
        self.labels = np.asarray(allocation.labels, dtype=int)
        self.allocation = allocation


def normalize_and_split(raw: RawDataset, ratio=(8, 1, 1), seed=0) -> NormalizedDataset:
    """Shuffle-split by seed and min-max normalize using train statistics only.

    Split sizes: train and validation take floor(n * r / sum(ratio)) rows,
    the remainder goes to test.  Transforms are fitted on the training rows
    and applied to every split, so no statistic leaks from held-out data.
    """
    n = len(raw)
    if n < 10:
        raise ValueError(f"need at least 10 rows to split, got {n}")
    parts = np.asarray(ratio, dtype=float)
    if parts.shape != (3,) or np.any(parts < 0) or parts.sum() <= 0:
        raise ValueError(f"ratio must be three non-negative numbers, got {ratio}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(np.floor(n * parts[0] / parts.sum()))
    n_val = int(np.floor(n * parts[1] / parts.sum()))
    train_idx = np.sort(order[:n_train])
    val_idx = np.sort(order[n_train:n_train + n_val])
    test_idx = np.sort(order[n_train + n_val:])

    def fit(columns):
        sub = columns[train_idx]
        return ColumnTransform(sub.min(axis=0), sub.max(axis=0))

    input_tf = fit(raw.inputs)
    target_tf = fit(raw.targets)
    return NormalizedDataset(
        inputs=input_tf.normalize(raw.inputs),
        targets=target_tf.normalize(raw.targets),
        input_transform=input_tf,
        target_transform=target_tf,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
        input_names=list(raw.input_names),
        target_names=list(raw.target_names),
    )
