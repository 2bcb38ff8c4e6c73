import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeromtl import (
    BurgersConfig,
    activation_trace,
    clusternet_init,
    compute_metrics,
    dominant_cluster_by_bin,
    export_prediction_grid,
    gate_agreement,
    generate_burgers,
    mlp_init,
    normalize_and_split,
    partition_by_dimension,
    predict_rows,
    traveling_wave,
)
from aeromtl.datasets import axis_values


# -- metrics ------------------------------------------------------------------

def test_metrics_identity():
    rep = compute_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert rep.mse == 0.0 and rep.mae == 0.0 and rep.count == 3


def test_metrics_by_hand():
    rep = compute_metrics([0.0, 2.0], [1.0, 1.0])
    assert rep.mse == pytest.approx(1.0)
    assert rep.mae == pytest.approx(1.0)


def test_metrics_match_loop_oracle(rng):
    pred = rng.normal(size=(20, 2))
    target = rng.normal(size=(20, 2))
    rep = compute_metrics(pred, target)
    se = ae = 0.0
    for i in range(20):
        for j in range(2):
            se += (pred[i, j] - target[i, j]) ** 2
            ae += abs(pred[i, j] - target[i, j])
    assert rep.mse == pytest.approx(se / 40, rel=1e-12)
    assert rep.mae == pytest.approx(ae / 40, rel=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
@settings(max_examples=40, deadline=None)
def test_mae_squared_never_exceeds_mse(seed, n):
    gen = np.random.default_rng(seed)
    rep = compute_metrics(gen.normal(size=n), gen.normal(size=n))
    assert rep.mae ** 2 <= rep.mse + 1e-15
    assert rep.mse >= 0.0 and rep.mae >= 0.0


def test_metrics_regions_and_empty_region(rng):
    pred = rng.normal(size=(10, 1))
    target = np.linspace(0.0, 9.0, 10)[:, None]
    rep = compute_metrics(pred, target, region_predicates={
        "high": lambda t: t[:, 0] > 5.0,
        "impossible": lambda t: t[:, 0] > 100.0,
    })
    assert "impossible" not in rep.regions  # absent, not zero
    region = rep.regions["high"]
    assert region.count == 4
    sub = compute_metrics(pred[target[:, 0] > 5.0], target[target[:, 0] > 5.0])
    assert region.mse == pytest.approx(sub.mse, rel=1e-12)


def test_metrics_region_on_raw_values(rng):
    pred = rng.normal(size=(6, 1))
    target = rng.normal(size=(6, 1))
    raw = np.arange(6.0)[:, None] * 10
    rep = compute_metrics(pred, target, region_predicates={"tail": lambda r: r[:, 0] >= 40},
                          region_values=raw)
    assert rep.regions["tail"].count == 2


def test_metrics_input_validation():
    with pytest.raises(ValueError):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        compute_metrics([], [])


# -- activation traces ----------------------------------------------------------

@pytest.fixture(scope="module")
def traced_setup():
    cfg = BurgersConfig(t_range=(0.2, 4.8, 0.92), x_range=(0.2, 4.8, 0.92),
                        v_range=(0.2, 4.8, 0.92))
    raw = generate_burgers(cfg)
    ds = normalize_and_split(raw, seed=5)
    ds.attach_allocation(partition_by_dimension(raw.inputs, 1, 4))
    model = clusternet_init(3, 1, 4, [8], [5], seed=2)
    return ds, model


def test_trace_columns_and_consistency(traced_setup, tmp_path):
    ds, model = traced_setup
    trace = activation_trace(model, ds, ds.test_idx)
    assert len(trace) == len(ds.test_idx)
    names = trace.column_names()
    # the column set covers: id, the allocation dimension, real, predicted,
    # per-cluster (f_j, c_j), and the activated index
    for required in ["id", "x", "real", "predicted", "f1", "c1", "f4", "c4", "activated"]:
        assert required in names
    # activated index replays as the argmax of the emitted gate values
    np.testing.assert_array_equal(trace.activated, np.argmax(trace.c, axis=1))
    assert np.all((trace.c > 0.0) & (trace.c < 1.0))

    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(trace)
    k = 7
    assert int(rows[k]["id"]) == trace.ids[k]
    assert float(rows[k]["c2"]) == trace.c[k, 1]
    assert int(rows[k]["activated"]) == trace.activated[k]


def test_trace_denormalizes_targets(traced_setup):
    ds, model = traced_setup
    rows = ds.test_idx[:10]
    trace = activation_trace(model, ds, rows)
    np.testing.assert_allclose(trace.real, ds.raw_targets(rows), atol=1e-12)
    np.testing.assert_allclose(trace.inputs_raw, ds.raw_inputs(rows), atol=1e-12)
    soft = predict_rows(model, ds.inputs[rows])
    np.testing.assert_allclose(
        trace.predicted, ds.target_transform.denormalize(soft), atol=1e-12)


def test_trace_single_cluster_always_zero(traced_setup):
    ds, _ = traced_setup
    solo = clusternet_init(3, 1, 1, [6], [4], seed=0)
    ds1 = normalize_and_split(generate_burgers(BurgersConfig(
        t_range=(0.2, 4.8, 0.92), x_range=(0.2, 4.8, 0.92),
        v_range=(0.2, 4.8, 0.92))), seed=5)
    ds1.attach_allocation(partition_by_dimension(ds1.raw_inputs(), 1, 1))
    trace = activation_trace(solo, ds1)
    assert np.all(trace.activated == 0)


def test_gate_agreement_and_dominance():
    activated = np.array([0, 0, 1, 1, 2, 2, 2, 1])
    labels = np.array([0, 0, 1, 1, 2, 2, 1, 1])
    assert gate_agreement(activated, labels) == pytest.approx(7 / 8)
    dom = dominant_cluster_by_bin(activated, labels)
    assert dom[0] == (0, 1.0)
    assert dom[1] == (1, 0.75)
    assert dom[2] == (2, 1.0)


# -- prediction grids -------------------------------------------------------------

def test_grid_export_24x24_slice(traced_setup, tmp_path):
    ds, model = traced_setup
    t_axis = axis_values(0.2, 4.8, 0.2)
    x_axis = axis_values(0.2, 4.8, 0.2)
    path = tmp_path / "grid.csv"
    raw = export_prediction_grid(model, [t_axis, x_axis, [1.0]], ds, path)
    assert len(raw) == 24 * 24
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "v", "predicted"]
    assert len(rows) == 1 + 576
    # lexicographic order: x spins before t
    assert float(rows[1][0]) == 0.2 and float(rows[1][1]) == 0.2
    assert float(rows[2][1]) == 0.4
    assert float(rows[25][0]) == 0.4


def test_grid_export_zero_axis_rejected(traced_setup, tmp_path):
    ds, model = traced_setup
    with pytest.raises(ValueError):
        export_prediction_grid(model, [[1.0], [], [1.0]], ds, tmp_path / "g.csv")
    with pytest.raises(ValueError):
        export_prediction_grid(model, [[1.0], [1.0]], ds, tmp_path / "g.csv")


def test_grid_oracle_matches_generator_bitwise(tmp_path):
    cfg = BurgersConfig(t_range=(0.2, 4.8, 0.92), x_range=(0.2, 4.8, 0.92),
                        v_range=(0.2, 4.8, 0.92))
    raw = generate_burgers(cfg)
    ds = normalize_and_split(raw, seed=5)
    model = mlp_init([3, 6, 1], seed=0)
    axes = [axis_values(*cfg.t_range), axis_values(*cfg.x_range), axis_values(*cfg.v_range)]
    oracle = lambda R: traveling_wave(R[:, 0], R[:, 1], R[:, 2],  # noqa: E731
                                      cfg.u_left, cfg.u_right, cfg.shock_offset)
    path = tmp_path / "g.csv"
    export_prediction_grid(model, axes, ds, path, oracle=oracle)
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    got = np.array([float(r["real"]) for r in rows])
    np.testing.assert_array_equal(got, raw.targets[:, 0])  # bitwise via repr round-trip


def test_predict_rows_threads_match_serial(traced_setup):
    ds, model = traced_setup
    X = ds.inputs[ds.test_idx]
    serial = predict_rows(model, X, threads=1)
    threaded = predict_rows(model, X, threads=4)
    np.testing.assert_allclose(threaded, serial, atol=1e-12)


def test_predict_rows_rejects_unknown_model():
    with pytest.raises(TypeError):
        predict_rows(object(), np.zeros((2, 2)))
