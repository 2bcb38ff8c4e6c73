#!/usr/bin/env python3
"""Run the shockwave benchmark comparison and print a results table.

Trains the fully connected baselines and the three allocation-gated
mixtures (bins on x, bins on v, k-means on the full input rows) under one
shared budget, then reports normalized test MSE/MAE overall and on the
scarce high-speed region.  Artifacts land in per-run directories under
--out.

Example:
    python scripts/run_burgers_experiment.py --out runs/burgers --iterations 40000
"""

import argparse
import json
import sys
from pathlib import Path

import yaml

from aeromtl.cli import main as cli_main

EXPERIMENTS = {
    "FCN_1": {"model": {"kind": "fcn", "structure": "3*32"}, "allocation": None},
    "FCN_2": {"model": {"kind": "fcn", "structure": "3*64"}, "allocation": None},
    "MTL_kmeans": {"model": {"kind": "clusternet", "structure": "4;3*64;1*5"},
                   "allocation": {"method": "kmeans", "k": 4}},
    "MTL_v": {"model": {"kind": "clusternet", "structure": "4;3*64;1*5"},
              "allocation": {"method": "partition", "k": 4, "dimension": "v"}},
    "MTL_x": {"model": {"kind": "clusternet", "structure": "4;3*64;1*5"},
              "allocation": {"method": "partition", "k": 4, "dimension": "x"}},
}


def build_config(name, spec, args):
    cfg = {
        "seed": args.seed,
        "output_dir": str(Path(args.out) / name),
        "dataset": {"kind": "burgers"},
        "model": spec["model"],
        "training": {
            "learning_rate": 1e-4,
            "batch_size": 128,
            "iterations": args.iterations,
            "optimizer": args.optimizer,
        },
        "evaluation": {"regions": {"high_speed": "u > 3.5"}},
    }
    if spec["allocation"]:
        cfg["allocation"] = spec["allocation"]
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="runs/burgers")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iterations", type=int, default=40000,
                        help="shared training budget (batch steps)")
    parser.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    parser.add_argument("--only", nargs="*", choices=sorted(EXPERIMENTS),
                        help="subset of experiments to run")
    args = parser.parse_args(argv)

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    names = args.only or list(EXPERIMENTS)

    rows = []
    for name in names:
        cfg = build_config(name, EXPERIMENTS[name], args)
        cfg_path = out_root / f"{name}.yaml"
        cfg_path.write_text(yaml.safe_dump(cfg))
        print(f"== {name}: training {args.iterations} iterations ...", flush=True)
        code = cli_main(["--config", str(cfg_path), "run"])
        if code != 0:
            print(f"{name}: failed with exit code {code}", file=sys.stderr)
            continue
        metrics = json.loads((Path(cfg["output_dir"]) / "metrics.json").read_text())
        if metrics["status"] != "ok":
            rows.append((name, EXPERIMENTS[name]["model"]["structure"],
                         "diverges", "diverges", "diverges"))
            continue
        test = metrics["splits"]["test"]
        region = test["regions"].get("high_speed", {})
        rows.append((name, EXPERIMENTS[name]["model"]["structure"],
                     f"{test['mse']:.3e}", f"{test['mae']:.3e}",
                     f"{region.get('mse', float('nan')):.3e}"))

    width = max(len(r[0]) for r in rows) + 2
    print(f"\n{'method':<{width}}{'structure':<14}{'test MSE':<12}"
          f"{'test MAE':<12}{'high-speed MSE':<14}")
    for r in rows:
        print(f"{r[0]:<{width}}{r[1]:<14}{r[2]:<12}{r[3]:<12}{r[4]:<14}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
