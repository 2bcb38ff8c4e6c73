#!/usr/bin/env python3
"""Write a synthetic cylinder-surface table for exercising the table pipeline.

The real table comes from an external flow solver; this stand-in has the
same columns (x, y, Ma inputs; P, Cp, Fx, Fy outputs) and a similar
scarce-extreme structure, but made-up physics.  Use it to try the CLI on
the table path end to end:

    python scripts/make_cylinder_table.py --out data/cylinder_synthetic.csv
    aeromtl --config configs/cylinder_synthetic.yaml run
"""

import argparse
import sys
from pathlib import Path

from aeromtl import save_table, synthesize_cylinder_table


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/cylinder_synthetic.csv")
    parser.add_argument("--rows", type=int, default=6000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(synthesize_cylinder_table(args.rows, seed=args.seed), path)
    print(f"wrote {path} ({args.rows} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
