"""Simulate the desk experiment and run every algorithm on it, then compare.

Usage: python3 scripts/run_desk.py [--config configs/2d-desk.ini] [--out runs/desk]
"""

import argparse
from pathlib import Path

from patmg.cli import main

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--config", default=str(ROOT / "configs" / "2d-desk.ini"))
parser.add_argument("--out", default="runs/desk", type=Path)
parser.add_argument("--algos", nargs="+", default=["tr", "ista", "fista", "mg-ista", "mg-fista"])
parser.add_argument("--threads", default="1")
args = parser.parse_args()

bundle = args.out / "bundle"
if main(["simulate", "--config", args.config, "--out", str(bundle)]) != 0:
    raise SystemExit("simulation failed")
for algo in args.algos:
    code = main(["reconstruct", "--config", args.config, "--data", str(bundle), "--out",
                 str(args.out / algo), "--algo", algo, "--threads", args.threads])
    if code != 0:
        raise SystemExit(f"{algo} failed with exit code {code}")
for base in ("ista", "fista"):
    if base in args.algos and f"mg-{base}" in args.algos:
        main(["compare", str(args.out / base), str(args.out / f"mg-{base}"),
              "--out", str(args.out / f"compare-{base}")])
