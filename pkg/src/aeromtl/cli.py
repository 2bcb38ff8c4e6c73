"""Experiment runner: config-file-driven pipelines and subcommands.

One YAML config describes dataset, allocation, model, training, and
evaluation; subcommands execute slices of the pipeline (generate,
allocate, train, evaluate, trace, grid) or all of it (run).  Every command
writes a provenance sidecar carrying the config hash so artifacts stay
attributable.

Exit codes: 0 success, 2 config/parse errors, 3 numeric failures,
4 I/O failures.  A training divergence is a reported outcome (status
"diverges" in metrics.json), not a crash.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .allocation import Allocation, kmeans_allocate, kmeans_fit, partition_by_dimension
from .clusternet import (
    ClusterNet,
    TrainConfig,
    clusternet_init,
    load_clusternet,
    save_clusternet,
    train,
    train_fcn,
)
from .datasets import (
    CYLINDER_SCHEMA,
    GENERATOR_VERSION,
    BurgersConfig,
    NormalizedDataset,
    RawDataset,
    TableSchema,
    generate_burgers,
    load_table,
    save_table,
    traveling_wave,
)
from .errors import ConfigError, NumericError, ParseError, TrainingDivergedError
from .evaluation import activation_trace, compute_metrics, export_prediction_grid, predict_rows
from .nn import MLP, load_mlp, mlp_init, read_json, save_mlp, write_json

NAMED_SCHEMAS = {"cylinder": CYLINDER_SCHEMA}


# -- structure strings -------------------------------------------------------

@dataclass(frozen=True)
class FcnStructure:
    hidden_layers: int
    width: int


@dataclass(frozen=True)
class ClusterNetStructure:
    clusters: int
    function_layers: int
    function_width: int
    context_layers: int
    context_width: int


_LAYERS_RE = re.compile(r"(\d+)\*(\d+)")


def _parse_layers(text: str, offset: int) -> tuple[int, int]:
    m = _LAYERS_RE.fullmatch(text.strip())
    if m is None:
        raise ParseError(f"expected H*W, got {text!r}", position=offset)
    layers, width = int(m.group(1)), int(m.group(2))
    if layers < 1 or width < 1:
        raise ParseError(f"layer counts must be positive in {text!r}", position=offset)
    return layers, width


def parse_structure(spec: str):
    """Parse "H*W" (plain net) or "q;Hf*Wf;Hc*Wc" (mixture) structure strings."""
    if not isinstance(spec, str) or not spec.strip():
        raise ParseError("empty structure string", position=0)
    if ";" not in spec:
        layers, width = _parse_layers(spec, 0)
        return FcnStructure(layers, width)
    parts = spec.split(";")
    if len(parts) != 3:
        raise ParseError(f"expected q;Hf*Wf;Hc*Wc, got {spec!r}", position=0)
    head = parts[0].strip()
    if not head.isdigit() or int(head) < 1:
        raise ParseError(f"cluster count must be a positive integer, got {parts[0]!r}",
                         position=0)
    off1 = len(parts[0]) + 1
    off2 = off1 + len(parts[1]) + 1
    f_layers, f_width = _parse_layers(parts[1], off1)
    c_layers, c_width = _parse_layers(parts[2], off2)
    return ClusterNetStructure(int(head), f_layers, f_width, c_layers, c_width)


def build_model(structure, input_width, output_width, seed):
    if isinstance(structure, FcnStructure):
        sizes = [input_width] + [structure.width] * structure.hidden_layers + [output_width]
        return mlp_init(sizes, seed=seed)
    return clusternet_init(
        input_width, output_width, structure.clusters,
        [structure.function_width] * structure.function_layers,
        [structure.context_width] * structure.context_layers,
        seed=seed)


# -- configuration -----------------------------------------------------------

@dataclass
class ExperimentConfig:
    seed: int
    output_dir: str
    dataset: dict
    model: dict
    training: dict
    allocation: dict | None = None
    evaluation: dict = field(default_factory=dict)
    grid: dict | None = None
    raw: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing {key!r} in {where} section")
    return section[key]


def load_config(path, seed_override=None, out_override=None) -> ExperimentConfig:
    """Read and validate a YAML experiment config."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")

    cfg = ExperimentConfig(
        seed=int(data.get("seed", 0)),
        output_dir=str(data.get("output_dir", "runs/experiment")),
        dataset=dict(_require(data, "dataset", "top-level")),
        model=dict(data.get("model", {})),
        training=dict(data.get("training", {})),
        allocation=dict(data["allocation"]) if data.get("allocation") else None,
        evaluation=dict(data.get("evaluation", {})),
        grid=dict(data["grid"]) if data.get("grid") else None,
        raw=data,
    )
    if seed_override is not None:
        cfg.seed = int(seed_override)
        cfg.raw = dict(cfg.raw, seed=cfg.seed)
    if out_override is not None:
        cfg.output_dir = str(out_override)

    kind = cfg.dataset.get("kind", "burgers")
    if kind not in ("burgers", "table"):
        raise ConfigError(f"dataset.kind must be 'burgers' or 'table', got {kind!r}")
    if kind == "table":
        _require(cfg.dataset, "path", "dataset")

    if cfg.model:
        structure = parse_structure(str(_require(cfg.model, "structure", "model")))
        model_kind = cfg.model.get("kind", "clusternet"
                                   if isinstance(structure, ClusterNetStructure) else "fcn")
        if model_kind == "clusternet" and not isinstance(structure, ClusterNetStructure):
            raise ConfigError("model.kind is clusternet but structure parses as a plain net")
        if model_kind == "fcn" and not isinstance(structure, FcnStructure):
            raise ConfigError("model.kind is fcn but structure parses as a mixture")
        if isinstance(structure, ClusterNetStructure):
            if cfg.allocation is None:
                raise ConfigError("a clusternet model needs an allocation section")
            k = int(cfg.allocation.get("k", structure.clusters))
            if k != structure.clusters:
                raise ConfigError(
                    f"allocation k={k} does not match model cluster count "
                    f"q={structure.clusters}")
    return cfg


def _seed_streams(seed: int) -> dict:
    """Fixed-order derived seeds: split, allocation, init, batches."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("split", "allocation", "init", "batches")
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def _table_schema(section: dict) -> TableSchema:
    schema = section.get("schema", "cylinder")
    if isinstance(schema, str):
        if schema not in NAMED_SCHEMAS:
            raise ConfigError(f"unknown named schema {schema!r}")
        return NAMED_SCHEMAS[schema]
    if isinstance(schema, dict):
        try:
            return TableSchema(tuple(schema["inputs"]), tuple(schema["targets"]),
                               {k: tuple(v) for k, v in schema.get("ranges", {}).items()})
        except KeyError as exc:
            raise ConfigError(f"table schema needs 'inputs' and 'targets': {exc}") from exc
    raise ConfigError("dataset.schema must be a name or a mapping")


def _burgers_config(section: dict) -> BurgersConfig:
    defaults = BurgersConfig()
    def rng3(key, fallback):
        val = section.get(key)
        if val is None:
            return fallback
        if len(val) != 3:
            raise ConfigError(f"dataset.{key} must be [start, stop, step]")
        return tuple(float(v) for v in val)
    return BurgersConfig(
        t_range=rng3("t_range", defaults.t_range),
        x_range=rng3("x_range", defaults.x_range),
        v_range=rng3("v_range", defaults.v_range),
        u_left=float(section.get("u_left", defaults.u_left)),
        u_right=float(section.get("u_right", defaults.u_right)),
        shock_offset=float(section.get("shock_offset", defaults.shock_offset)),
    )


def build_raw_dataset(cfg: ExperimentConfig) -> tuple[RawDataset, BurgersConfig | None]:
    if cfg.dataset.get("kind", "burgers") == "burgers":
        bc = _burgers_config(cfg.dataset)
        return generate_burgers(bc), bc
    schema = _table_schema(cfg.dataset)
    return load_table(cfg.dataset["path"], schema), None


def build_dataset(cfg: ExperimentConfig, seeds: dict):
    raw, burgers_cfg = build_raw_dataset(cfg)
    ratio = tuple(cfg.dataset.get("split_ratio", (8, 1, 1)))
    from .datasets import normalize_and_split
    dataset = normalize_and_split(raw, ratio=ratio, seed=seeds["split"])
    return raw, dataset, burgers_cfg


def build_allocation(cfg: ExperimentConfig, raw: RawDataset,
                     dataset: NormalizedDataset, seeds: dict) -> Allocation:
    section = cfg.allocation or {}
    method = section.get("method", "partition")
    k = int(section.get("k", 4))
    if method == "partition":
        dim = section.get("dimension", 0)
        if isinstance(dim, str):
            if dim not in raw.input_names:
                raise ConfigError(f"allocation.dimension {dim!r} is not an input column")
            dim = raw.input_names.index(dim)
        widths = section.get("widths")
        return partition_by_dimension(raw.inputs, int(dim), k, widths=widths)
    if method == "kmeans":
        model = kmeans_fit(dataset.inputs[dataset.train_idx], k,
                           seed=seeds["allocation"],
                           max_iters=int(section.get("max_iters", 300)),
                           tol=float(section.get("tol", 1e-6)))
        return kmeans_allocate(model, dataset.inputs)
    raise ConfigError(f"unknown allocation method {method!r}")


def _train_config(cfg: ExperimentConfig, seeds: dict) -> TrainConfig:
    t = cfg.training
    return TrainConfig(
        learning_rate=float(t.get("learning_rate", 1e-4)),
        batch_size=int(t.get("batch_size", 128)),
        iterations=int(t.get("iterations", 2000)),
        seed=seeds["batches"],
        optimizer=str(t.get("optimizer", "sgd")),
        gate_mode=str(t.get("gate_mode", "soft")),
    )


_REGION_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|>|<)\s*([-+0-9.eE]+)\s*$")
_REGION_OPS = {
    ">": lambda col, thr: col > thr,
    ">=": lambda col, thr: col >= thr,
    "<": lambda col, thr: col < thr,
    "<=": lambda col, thr: col <= thr,
}


def compile_region(expr: str, target_names: list[str]):
    """Turn "u > 3.5" into a row-mask callable over raw target rows."""
    m = _REGION_RE.match(expr)
    if m is None:
        raise ConfigError(f"cannot parse region expression {expr!r}")
    name, op, threshold = m.group(1), m.group(2), float(m.group(3))
    if name not in target_names:
        raise ConfigError(f"region expression references unknown target {name!r}")
    col = target_names.index(name)
    fn = _REGION_OPS[op]
    return lambda raw_targets: fn(np.asarray(raw_targets)[:, col], threshold)


def _region_predicates(cfg: ExperimentConfig, target_names: list[str]) -> dict:
    regions = cfg.evaluation.get("regions", {})
    return {name: compile_region(expr, target_names) for name, expr in regions.items()}


def evaluate_model(model, dataset: NormalizedDataset, regions: dict,
                   gate_mode="soft", threads=1) -> dict:
    reports = {}
    for split in ("train", "val", "test"):
        idx = dataset.split(split)
        pred = predict_rows(model, dataset.inputs[idx], gate_mode=gate_mode,
                            threads=threads)
        report = compute_metrics(pred, dataset.targets[idx],
                                 region_predicates=regions,
                                 region_values=dataset.raw_targets(idx))
        reports[split] = report.to_dict()
    return reports


def _write_provenance(out_dir: Path, cfg: ExperimentConfig, artifacts: dict) -> None:
    write_json({
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "package_version": __version__,
        "artifacts": artifacts,
        "config": cfg.raw,
    }, out_dir / "provenance.json")


def _load_checkpoint(path):
    payload = read_json(path)
    fmt = payload.get("format", "")
    if fmt.endswith("clusternet"):
        return load_clusternet(path)
    return load_mlp(path)


# -- pipeline commands -------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig, threads=1) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    raw, burgers_cfg = build_raw_dataset(cfg)
    table_path = out / "dataset.csv"
    save_table(raw, table_path)
    sidecar = {
        "config_hash": cfg.config_hash(),
        "generator_version": GENERATOR_VERSION,
        "rows": len(raw),
        "columns": raw.input_names + raw.target_names,
    }
    if burgers_cfg is not None:
        sidecar["burgers"] = burgers_cfg.to_dict()
    write_json(sidecar, out / "dataset.provenance.json")
    _write_provenance(out, cfg, {"dataset": "dataset.csv"})
    print(f"wrote {table_path} ({len(raw)} rows)")
    return 0


def cmd_allocate(cfg: ExperimentConfig, threads=1) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_streams(cfg.seed)
    raw, dataset, _ = build_dataset(cfg, seeds)
    if cfg.allocation is None:
        raise ConfigError("allocate needs an allocation section")
    allocation = build_allocation(cfg, raw, dataset, seeds)
    labels_path = out / "labels.csv"
    with labels_path.open("w", encoding="utf-8") as fh:
        fh.write("row,label\n")
        for i, lab in enumerate(allocation.labels):
            fh.write(f"{i},{int(lab)}\n")
    _write_provenance(out, cfg, {"labels": "labels.csv"})
    print(f"wrote {labels_path} (k={allocation.k})")
    return 0


def _prepare(cfg: ExperimentConfig):
    seeds = _seed_streams(cfg.seed)
    raw, dataset, burgers_cfg = build_dataset(cfg, seeds)
    structure = parse_structure(str(_require(cfg.model, "structure", "model")))
    if isinstance(structure, ClusterNetStructure):
        allocation = build_allocation(cfg, raw, dataset, seeds)
        if allocation.k != structure.clusters:
            raise ConfigError(
                f"allocation k={allocation.k} != model cluster count q={structure.clusters}")
        dataset.attach_allocation(allocation)
    model = build_model(structure, dataset.input_width, dataset.target_width,
                        seeds["init"])
    return seeds, raw, dataset, burgers_cfg, structure, model


def cmd_train(cfg: ExperimentConfig, threads=1) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds, _, dataset, _, _, model = _prepare(cfg)
    train_cfg = _train_config(cfg, seeds)
    artifacts = {}
    try:
        if isinstance(model, ClusterNet):
            trace = train(model, dataset, train_cfg)
        else:
            trace = train_fcn(model, dataset, train_cfg)
    except TrainingDivergedError as exc:
        write_json({"status": "diverges", "diverged_at": exc.iteration,
                    "config_hash": cfg.config_hash()}, out / "metrics.json")
        _write_provenance(out, cfg, {"metrics": "metrics.json"})
        print(f"training diverged at iteration {exc.iteration}")
        return 0
    trace.to_csv(out / "loss_trace.csv")
    if isinstance(model, ClusterNet):
        save_clusternet(model, out / "checkpoint.json")
    else:
        save_mlp(model, out / "checkpoint.json")
    artifacts.update({"checkpoint": "checkpoint.json", "loss_trace": "loss_trace.csv"})
    _write_provenance(out, cfg, artifacts)
    print(f"trained {type(model).__name__} for {train_cfg.iterations} iterations")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, checkpoint, threads=1) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_streams(cfg.seed)
    _, dataset, _ = build_dataset(cfg, seeds)
    model = _load_checkpoint(checkpoint)
    regions = _region_predicates(cfg, dataset.target_names)
    gate_mode = str(cfg.training.get("gate_mode", "soft"))
    reports = evaluate_model(model, dataset, regions, gate_mode=gate_mode,
                             threads=threads)
    write_json({"status": "ok", "gate_mode": gate_mode, "splits": reports,
                "config_hash": cfg.config_hash()}, out / "metrics.json")
    _write_provenance(out, cfg, {"metrics": "metrics.json"})
    print(f"test mse {reports['test']['mse']:.6g}")
    return 0


def cmd_trace(cfg: ExperimentConfig, checkpoint, threads=1) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_streams(cfg.seed)
    raw, dataset, _ = build_dataset(cfg, seeds)
    model = _load_checkpoint(checkpoint)
    if not isinstance(model, ClusterNet):
        raise ConfigError("activation traces need a clusternet checkpoint")
    trace = activation_trace(model, dataset, dataset.test_idx)
    trace.to_csv(out / "activation_trace.csv")
    _write_provenance(out, cfg, {"activation_trace": "activation_trace.csv"})
    print(f"wrote activation trace for {len(trace)} rows")
    return 0


def _grid_axes(cfg: ExperimentConfig, dataset: NormalizedDataset) -> list[np.ndarray]:
    if cfg.grid is None or "axes" not in cfg.grid:
        raise ConfigError("grid export needs a grid.axes section")
    from .datasets import axis_values
    axes = []
    spec = cfg.grid["axes"]
    for name in dataset.input_names:
        if name not in spec:
            raise ConfigError(f"grid.axes is missing input {name!r}")
        entry = spec[name]
        if isinstance(entry, (list, tuple)) and len(entry) == 3 and \
                not isinstance(entry[0], (list, tuple)):
            try:
                axes.append(axis_values(*[float(v) for v in entry]))
                continue
            except ValueError:
                pass
        axes.append(np.asarray(entry, dtype=float).ravel())
    return axes


def cmd_grid(cfg: ExperimentConfig, checkpoint, threads=1) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_streams(cfg.seed)
    _, dataset, burgers_cfg = build_dataset(cfg, seeds)
    model = _load_checkpoint(checkpoint)
    axes = _grid_axes(cfg, dataset)
    oracle = None
    if burgers_cfg is not None and (cfg.grid or {}).get("with_oracle", False):
        bc = burgers_cfg
        oracle = lambda raw: traveling_wave(  # noqa: E731
            raw[:, 0], raw[:, 1], raw[:, 2], bc.u_left, bc.u_right, bc.shock_offset)
    gate_mode = str(cfg.training.get("gate_mode", "soft"))
    export_prediction_grid(model, axes, dataset, out / "prediction_grid.csv",
                           oracle=oracle, gate_mode=gate_mode, threads=threads)
    _write_provenance(out, cfg, {"prediction_grid": "prediction_grid.csv"})
    print(f"wrote {out / 'prediction_grid.csv'}")
    return 0


def cmd_run(cfg: ExperimentConfig, threads=1) -> int:
    """Full pipeline: build data, allocate, train, evaluate, export."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds, _, dataset, _, _, model = _prepare(cfg)
    train_cfg = _train_config(cfg, seeds)
    is_mixture = isinstance(model, ClusterNet)
    artifacts = {}
    try:
        if is_mixture:
            trace = train(model, dataset, train_cfg)
        else:
            trace = train_fcn(model, dataset, train_cfg)
    except TrainingDivergedError as exc:
        write_json({"status": "diverges", "diverged_at": exc.iteration,
                    "config_hash": cfg.config_hash()}, out / "metrics.json")
        _write_provenance(out, cfg, {"metrics": "metrics.json"})
        print(f"training diverged at iteration {exc.iteration}")
        return 0

    trace.to_csv(out / "loss_trace.csv")
    artifacts["loss_trace"] = "loss_trace.csv"
    if is_mixture:
        save_clusternet(model, out / "checkpoint.json")
    else:
        save_mlp(model, out / "checkpoint.json")
    artifacts["checkpoint"] = "checkpoint.json"

    regions = _region_predicates(cfg, dataset.target_names)
    reports = evaluate_model(model, dataset, regions,
                             gate_mode=train_cfg.gate_mode, threads=threads)
    write_json({"status": "ok", "gate_mode": train_cfg.gate_mode, "splits": reports,
                "config_hash": cfg.config_hash()}, out / "metrics.json")
    artifacts["metrics"] = "metrics.json"

    if is_mixture:
        act = activation_trace(model, dataset, dataset.test_idx)
        act.to_csv(out / "activation_trace.csv")
        artifacts["activation_trace"] = "activation_trace.csv"

    _write_provenance(out, cfg, artifacts)
    print(f"run complete: test mse {reports['test']['mse']:.6g} -> {out}")
    return 0


# -- entry point -------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aeromtl",
        description="Allocation-gated mixture training for aerodynamic surrogates")
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override config output_dir")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap for data-parallel row evaluation")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="write the configured dataset as CSV")
    sub.add_parser("allocate", help="write per-row allocation labels as CSV")
    sub.add_parser("train", help="train the configured model")
    for name in ("evaluate", "trace", "grid"):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True, help="model checkpoint path")
    sub.add_parser("run", help="full pipeline: generate/allocate/train/evaluate/export")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    threads = max(1, args.threads)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "generate":
            return cmd_generate(cfg, threads)
        if args.command == "allocate":
            return cmd_allocate(cfg, threads)
        if args.command == "train":
            return cmd_train(cfg, threads)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, threads)
        if args.command == "trace":
            return cmd_trace(cfg, args.checkpoint, threads)
        if args.command == "grid":
            return cmd_grid(cfg, args.checkpoint, threads)
        return cmd_run(cfg, threads)
    except (ConfigError, ParseError, ValueError) as exc:
        print(f"config/parse error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
