import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from aeromtl import ConfigError, ParseError, synthesize_cylinder_table, save_table
from aeromtl.cli import (
    ClusterNetStructure,
    FcnStructure,
    build_model,
    compile_region,
    load_config,
    main,
    parse_structure,
)

TINY = [0.2, 4.8, 0.92]


def write_config(path, **overrides):
    cfg = {
        "seed": 3,
        "output_dir": str(path.parent / "out"),
        "dataset": {"kind": "burgers", "t_range": TINY, "x_range": TINY, "v_range": TINY},
        "allocation": {"method": "partition", "k": 4, "dimension": "x"},
        "model": {"kind": "clusternet", "structure": "4;2*8;1*5"},
        "training": {"learning_rate": 1e-4, "batch_size": 32, "iterations": 40,
                     "optimizer": "adam"},
        "evaluation": {"regions": {"high_speed": "u > 3.5"}},
    }
    for key, value in overrides.items():
        if value is None:
            cfg.pop(key, None)
        else:
            cfg[key] = value
    path.write_text(yaml.safe_dump(cfg))
    return cfg


# -- structure strings ----------------------------------------------------------

def test_parse_fcn_structure():
    assert parse_structure("3*32") == FcnStructure(3, 32)


def test_parse_clusternet_structure():
    got = parse_structure("4;3*64;1*5")
    assert got == ClusterNetStructure(4, 3, 64, 1, 5)


@pytest.mark.parametrize("bad,pos", [
    ("4;;", 2),
    ("", 0),
    ("3*", 0),
    ("x*2", 0),
    ("4;3*64", 0),
    ("0;3*64;1*5", 0),
    ("4;3*64;1*5;9", 0),
])
def test_parse_structure_errors_carry_position(bad, pos):
    with pytest.raises(ParseError) as err:
        parse_structure(bad)
    assert err.value.position == pos


def test_parse_structure_position_points_into_string():
    with pytest.raises(ParseError) as err:
        parse_structure("4;3*64;nope")
    assert err.value.position == 7


def test_build_model_widths():
    fcn = build_model(parse_structure("3*32"), 3, 1, seed=0)
    assert fcn.layer_sizes == [3, 32, 32, 32, 1]
    mix = build_model(parse_structure("4;3*64;1*5"), 3, 1, seed=0)
    assert mix.q == 4
    assert mix.clusters[0].function_net.layer_sizes == [3, 64, 64, 64, 1]
    assert mix.clusters[0].context_net.layer_sizes == [3, 5, 1]


# -- config loading ----------------------------------------------------------------

def test_load_config_roundtrip(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    cfg = load_config(path)
    assert cfg.seed == 3
    assert cfg.allocation["k"] == 4
    assert cfg.config_hash() == load_config(path).config_hash()


def test_load_config_k_q_mismatch(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, allocation={"method": "partition", "k": 3, "dimension": "x"})
    with pytest.raises(ConfigError, match="k=3"):
        load_config(path)


def test_load_config_clusternet_needs_allocation(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, allocation=None)
    with pytest.raises(ConfigError, match="allocation"):
        load_config(path)


def test_load_config_rejects_bad_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("dataset: [unclosed")
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    cfg = load_config(path, seed_override=99, out_override="/tmp/elsewhere")
    assert cfg.seed == 99
    assert cfg.output_dir == "/tmp/elsewhere"
    # the override participates in the config hash
    assert cfg.config_hash() != load_config(path).config_hash()


def test_compile_region():
    pred = compile_region("u > 3.5", ["u"])
    mask = pred(np.array([[1.0], [4.0], [3.5]]))
    np.testing.assert_array_equal(mask, [False, True, False])
    with pytest.raises(ConfigError):
        compile_region("w > 1", ["u"])
    with pytest.raises(ConfigError):
        compile_region("u ~ 1", ["u"])


# -- subcommands --------------------------------------------------------------------

def test_full_run_writes_all_artifacts(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    assert main(["--config", str(path), "run"]) == 0
    out = tmp_path / "out"
    for artifact in ["metrics.json", "loss_trace.csv", "checkpoint.json",
                     "activation_trace.csv", "provenance.json"]:
        assert (out / artifact).exists(), artifact
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["status"] == "ok"
    assert set(metrics["splits"]) == {"train", "val", "test"}
    assert metrics["splits"]["test"]["count"] > 0
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["config_hash"] == metrics["config_hash"]
    assert prov["seed"] == 3


def test_run_deterministic_per_seed(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    main(["--config", str(path), "--out", str(tmp_path / "a"), "run"])
    main(["--config", str(path), "--out", str(tmp_path / "b"), "run"])
    for name in ("metrics.json", "checkpoint.json", "loss_trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_seed_changes_results(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    main(["--config", str(path), "--out", str(tmp_path / "a"), "run"])
    main(["--config", str(path), "--out", str(tmp_path / "b"), "--seed", "4", "run"])
    a = json.loads((tmp_path / "a" / "metrics.json").read_text())
    b = json.loads((tmp_path / "b" / "metrics.json").read_text())
    assert a["splits"]["test"]["mse"] != b["splits"]["test"]["mse"]


def test_generate_and_allocate(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    assert main(["--config", str(path), "--out", str(tmp_path / "gen"), "generate"]) == 0
    table = tmp_path / "gen" / "dataset.csv"
    sidecar = tmp_path / "gen" / "dataset.provenance.json"
    assert table.exists() and sidecar.exists()
    with table.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "v", "u"]
    assert len(rows) == 1 + 6 ** 3
    side = json.loads(sidecar.read_text())
    assert "config_hash" in side and "burgers" in side

    assert main(["--config", str(path), "--out", str(tmp_path / "al"), "allocate"]) == 0
    with (tmp_path / "al" / "labels.csv").open() as fh:
        labels = list(csv.DictReader(fh))
    assert len(labels) == 6 ** 3
    assert {r["label"] for r in labels} == {"0", "1", "2", "3"}


def test_train_then_evaluate_then_trace_then_grid(tmp_path):
    path = tmp_path / "c.yaml"
    cfg = write_config(path, grid={"axes": {"t": [1.0], "x": TINY, "v": [1.0]},
                                   "with_oracle": True})
    out = Path(cfg["output_dir"])
    assert main(["--config", str(path), "train"]) == 0
    ckpt = out / "checkpoint.json"
    assert ckpt.exists()

    assert main(["--config", str(path), "--out", str(tmp_path / "ev"), "evaluate",
                 "--checkpoint", str(ckpt)]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert "high_speed" in metrics["splits"]["test"]["regions"]

    assert main(["--config", str(path), "--out", str(tmp_path / "tr"), "trace",
                 "--checkpoint", str(ckpt)]) == 0
    assert (tmp_path / "tr" / "activation_trace.csv").exists()

    assert main(["--config", str(path), "--out", str(tmp_path / "gr"), "grid",
                 "--checkpoint", str(ckpt)]) == 0
    with (tmp_path / "gr" / "prediction_grid.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "v", "predicted", "real"]
    assert len(rows) == 1 + 6


def test_fcn_run_has_no_activation_trace(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, model={"kind": "fcn", "structure": "2*8"}, allocation=None)
    assert main(["--config", str(path), "run"]) == 0
    out = tmp_path / "out"
    assert (out / "metrics.json").exists()
    assert not (out / "activation_trace.csv").exists()


def test_evaluate_reloads_fcn_checkpoint(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, model={"kind": "fcn", "structure": "2*8"}, allocation=None)
    assert main(["--config", str(path), "run"]) == 0
    run_metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert main(["--config", str(path), "--out", str(tmp_path / "ev"), "evaluate",
                 "--checkpoint", str(tmp_path / "out" / "checkpoint.json")]) == 0
    ev_metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert ev_metrics["splits"]["test"]["mse"] == run_metrics["splits"]["test"]["mse"]


def test_table_pipeline_end_to_end(tmp_path):
    table_path = tmp_path / "cyl.csv"
    save_table(synthesize_cylinder_table(400, seed=1), table_path)
    path = tmp_path / "c.yaml"
    write_config(
        path,
        dataset={"kind": "table", "path": str(table_path), "schema": "cylinder"},
        allocation={"method": "kmeans", "k": 4},
        evaluation={"regions": {"stagnation": "Cp > 1.5"}},
    )
    assert main(["--config", str(path), "run"]) == 0
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["status"] == "ok"


def test_exit_code_2_on_bad_config(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, model={"kind": "clusternet", "structure": "4;;"})
    assert main(["--config", str(path), "run"]) == 2


def test_exit_code_2_on_k_q_mismatch_before_training(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, allocation={"method": "partition", "k": 3, "dimension": "x"})
    assert main(["--config", str(path), "run"]) == 2


def test_exit_code_4_on_unwritable_output(tmp_path):
    blocker = tmp_path / "blocked"
    blocker.write_text("a file, not a directory")
    path = tmp_path / "c.yaml"
    write_config(path, output_dir=str(blocker / "sub"))
    assert main(["--config", str(path), "run"]) == 4


def test_divergence_reported_not_crashed(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path, training={"learning_rate": 1e14, "batch_size": 32,
                                 "iterations": 300, "optimizer": "sgd"})
    assert main(["--config", str(path), "run"]) == 0
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["status"] == "diverges"
    assert isinstance(metrics["diverged_at"], int)


def test_threads_flag_produces_same_metrics(tmp_path):
    path = tmp_path / "c.yaml"
    write_config(path)
    main(["--config", str(path), "--out", str(tmp_path / "a"), "run"])
    main(["--config", str(path), "--out", str(tmp_path / "b"), "--threads", "2", "run"])
    a = json.loads((tmp_path / "a" / "metrics.json").read_text())
    b = json.loads((tmp_path / "b" / "metrics.json").read_text())
    assert a["splits"]["test"]["mse"] == pytest.approx(b["splits"]["test"]["mse"], rel=1e-9)
