"""Multigrid ablation on the desk experiment.

Runs the fixed-grid base method once, then MG variants with different
coarse tolerances and iteration caps.  Reports each variant's final F and
time to reach the fixed-grid final F.

Usage: python3 scripts/mg_ablation.py [--base ista|fista] [--config ...]
"""

import argparse
from pathlib import Path

from patmg.cli import build_operator, run_reconstruction, simulate_experiment
from patmg.config import load_config
from patmg.evaluation import time_to_target

ROOT = Path(__file__).resolve().parents[1]

parser = argparse.ArgumentParser()
parser.add_argument("--config", default=str(ROOT / "configs" / "2d-desk.ini"))
parser.add_argument("--base", choices=("ista", "fista"), default="ista")
parser.add_argument("--eps-c", nargs="+", type=float, default=[1e-2, 1e-4, 1e-6])
parser.add_argument("--q-c", nargs="+", type=int, default=[8])
parser.add_argument("--eps-d", type=float, help="override the fine tolerance for MG runs")
args = parser.parse_args()

cfg = load_config(args.config)
bundle = simulate_experiment(cfg)
op = build_operator(cfg)

fixed = run_reconstruction(cfg, op, bundle.data, args.base, bundle.phantom, bundle.sim_grid)
target = fixed.records[-1].F
t_fixed = fixed.records[-1].cpu_seconds
print(f"{args.base}: {len(fixed.records)} iterations, final F {target:.5g}, RE "
      f"{fixed.records[-1].RE:.2f}%, {t_fixed:.1f}s")
print(f"{'eps_c':>8} {'q_c':>4} {'iters':>6} {'recurs':>6} {'final F':>9} {'RE %':>6} "
      f"{'t_target':>9} {'speedup':>8}")
for q_c in args.q_c:
    for eps_c in args.eps_c:
        overrides = {"eps_c": eps_c, "q_c": q_c}
        if args.eps_d is not None:
            overrides["eps_d"] = args.eps_d
        res = run_reconstruction(cfg, op, bundle.data, f"mg-{args.base}", bundle.phantom,
                                 bundle.sim_grid, mg_overrides=overrides)
        t = time_to_target(res.records, target)
        last = res.records[-1]
        print(f"{eps_c:8.0e} {q_c:4d} {len(res.records):6d} {len(res.mg.recursions):6d} "
              f"{last.F:9.5g} {last.RE:6.2f} {t:9.1f} {t_fixed / t:8.2f}", flush=True)
