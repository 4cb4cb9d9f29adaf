"""Batch front-end: ``patmg simulate | reconstruct | compare | defaults``.

Exit codes: 0 success, 2 configuration or bundle error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, default_config_text, load_config
from .core import DivergenceError, Grid, SensorData
from .evaluation import relative_error, time_reversal, time_to_target, visualize
from .fieldio import read_field, write_field
from .measurement import add_awgn, layered_medium, perturb_medium, smooth_medium
from .multigrid import LevelPair, MgInfo, coarse_operator, mg_solve, restrict_data
from .optim import (IterationRecord, LeastSquaresTV, fista, ista, lipschitz, read_records_csv, tv,
                    write_records_csv)
from .wave import ForwardOperator

log = logging.getLogger("patmg")

ALGORITHMS = ("tr", "ista", "fista", "mg-ista", "mg-fista")
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, blob) -> None:
    Path(path).write_text(json.dumps(blob, indent=2, sort_keys=True, allow_nan=True) + "\n")


# --------------------------------------------------------------------------
# simulation


@dataclass
class Bundle:
    """Synthetic measurement: truth on the simulation grid plus sensor data."""

    phantom: np.ndarray
    sim_grid: Grid
    data: np.ndarray
    clean: np.ndarray
    dt: float
    media: dict = field(default_factory=dict)


def simulate_experiment(cfg: ExperimentConfig, seed: int | None = None, workers: int = 1) -> Bundle:
    """Generate data on the simulation grid with the perturbed medium.

    The medium and data noise seeds are both derived from ``seed``.
    """
    seed = cfg.seed if seed is None else seed
    medium_seed, noise_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    sim = cfg.sim_grid()
    base = layered_medium(sim, cfg.medium.layers, cfg.medium.background, cfg.medium.y)
    true = smooth_medium(base) if cfg.medium.smooth else base
    perturbed = perturb_medium(base, sim, cfg.perturbation.awgn_db,
                               cfg.perturbation.shift_fraction * cfg.sensors.radius,
                               medium_seed, smooth=cfg.medium.smooth)
    phantom = cfg.phantom_on(sim)
    op = ForwardOperator(sim, perturbed, cfg.sensor_array(), workers=workers)
    clean = op.apply(phantom)
    noisy = add_awgn(SensorData(clean, sim.dt), cfg.noise.snr_db, noise_seed).samples
    return Bundle(phantom, sim, noisy, clean, sim.dt, {"true": true, "perturbed": perturbed})


def write_bundle(bundle: Bundle, cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    spacing = list(bundle.sim_grid.spacing)
    files = [write_field(out / "phantom.field", bundle.phantom, {"grid": "simulation", "spacing": spacing}),
             write_field(out / "data.field", bundle.data, {"dt": bundle.dt, "units": "Pa"})]
    noisy = not np.array_equal(bundle.data, bundle.clean)
    if noisy:
        files.append(write_field(out / "data_clean.field", bundle.clean, {"dt": bundle.dt, "units": "Pa"}))
    for label, medium in bundle.media.items():
        for name in ("c0", "rho0", "alpha0"):
            files.append(write_field(out / f"medium_{label}_{name}.field", getattr(medium, name),
                                     {"grid": "simulation", "spacing": spacing, "y": medium.y}))
    (out / "config.ini").write_text(cfg.source_text)
    manifest = {
        "kind": "bundle", "version": __version__, "experiment": cfg.name, "seed": seed,
        "config_digest": cfg.digest(), "config_file": "config.ini",
        "simulation_grid": bundle.sim_grid.describe(), "reconstruction_grid": cfg.recon_grid().describe(),
        "noisy": noisy, "data_sha256": _sha256(out / "data.field"),
        "files": {p.name: _sha256(p) for p in files},
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def load_bundle(path: Path, cfg: ExperimentConfig) -> tuple[dict, np.ndarray, np.ndarray]:
    """Read and check a bundle against the configuration; returns (manifest, data, phantom)."""
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        data, _ = read_field(path / "data.field")
        phantom, _ = read_field(path / "phantom.field")
    except (OSError, ValueError) as exc:
        raise ConfigError([f"unreadable bundle {path}: {exc}"]) from None
    problems = []
    if manifest.get("kind") != "bundle":
        problems.append(f"{path} is not a data bundle")
    if _sha256(path / "data.field") != manifest.get("data_sha256"):
        problems.append("data.field does not match the manifest hash")
    recon = cfg.recon_grid()
    if manifest.get("reconstruction_grid") != json.loads(json.dumps(recon.describe())):
        problems.append("bundle was generated for a different reconstruction geometry")
    if manifest.get("simulation_grid") == manifest.get("reconstruction_grid"):
        problems.append("bundle data were simulated on the reconstruction grid (inverse crime)")
    if data.shape != (cfg.sensors.count, recon.nt):
        problems.append(f"data shape {data.shape} != ({cfg.sensors.count}, {recon.nt})")
    if problems:
        raise ConfigError(problems)
    return manifest, data, phantom


# --------------------------------------------------------------------------
# reconstruction


@dataclass
class Reconstruction:
    image: np.ndarray
    records: list
    lipschitz: dict = field(default_factory=dict)
    mg: MgInfo | None = None


def build_operator(cfg: ExperimentConfig, workers: int = 1) -> ForwardOperator:
    """Reconstruction model: nominal (unperturbed) medium on the reconstruction grid."""
    grid = cfg.recon_grid()
    return ForwardOperator(grid, cfg.medium_on(grid), cfg.sensor_array(), workers=workers)


def run_reconstruction(cfg: ExperimentConfig, op: ForwardOperator, data: np.ndarray, algo: str,
                       truth: np.ndarray | None = None, truth_grid: Grid | None = None,
                       max_iters: int | None = None, seed: int = 0, mg_overrides: dict | None = None,
                       callbacks=()) -> Reconstruction:
    """Run one algorithm; RE is logged when the truth is supplied."""
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
    error_fn = None
    if truth is not None:
        error_fn = lambda x: relative_error(x, truth, op.grid, truth_grid)  # noqa: E731
    lam = cfg.optimizer.lam
    if algo == "tr":
        tic = time.perf_counter()
        x = time_reversal(op, data)
        elapsed = time.perf_counter() - tic
        r = op.apply(x) - data
        rec = IterationRecord(1, elapsed, 0.5 * float(np.vdot(r, r)) + lam * tv(x), float(np.linalg.norm(r)),
                              error_fn(x) if error_fn else float("nan"))
        return Reconstruction(x, [rec])
    power_iters = cfg.optimizer.power_iters
    fine = lipschitz(op, power_iters, seed=seed)
    info = {"fine": {"value": fine.value, "cache_hit": fine.cache_hit, "converged": fine.converged}}
    objective = cfg.objective_config(algo.removeprefix("mg-"), max_iters)
    problem = LeastSquaresTV(op, data, lam, fine.value)
    if algo in ("ista", "fista"):
        solver = ista if algo == "ista" else fista
        x, records = solver(problem, objective, error_fn=error_fn, callbacks=callbacks)
        return Reconstruction(x, records, info)
    cop = coarse_operator(op)
    coarse = lipschitz(cop, power_iters, seed=seed)
    info["coarse"] = {"value": coarse.value, "cache_hit": coarse.cache_hit, "converged": coarse.converged}
    pair = LevelPair(problem, LeastSquaresTV(cop, restrict_data(data), lam, coarse.value))
    mg_config = cfg.multigrid
    if mg_overrides:
        mg_config = replace(mg_config, **mg_overrides)
    x, records, mg = mg_solve(pair, objective, mg_config, algo.removeprefix("mg-"), error_fn=error_fn,
                              callbacks=callbacks)
    return Reconstruction(x, records, info, mg)


def write_result(result: Reconstruction, cfg: ExperimentConfig, algo: str, out: Path,
                 bundle_manifest: dict, extra: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.recon_grid()
    write_field(out / "image.field", result.image, {"grid": "reconstruction", "spacing": list(grid.spacing)})
    write_records_csv(out / "records.csv", result.records)
    if np.any(result.image):
        visualize(result.image, out / "image_display", grid=grid)
    (out / "config.ini").write_text(cfg.source_text)
    last = result.records[-1]
    manifest = {
        "kind": "result", "version": __version__, "experiment": cfg.name, "algo": algo,
        "config_digest": cfg.digest(), "config_file": "config.ini",
        "data_sha256": bundle_manifest.get("data_sha256"), "bundle_seed": bundle_manifest.get("seed"),
        "lipschitz": result.lipschitz, "iterations": len(result.records),
        "final": {"F": last.F, "RES": last.RES, "RE": last.RE, "cpu_seconds": last.cpu_seconds},
        **extra,
    }
    if result.mg is not None:
        manifest["multigrid"] = {"recursions": result.mg.recursions, "coarse_iters": result.mg.coarse_iters,
                                 "max_coherence_residual": max(result.mg.coherence_residuals, default=0.0)}
    _write_json(out / "manifest.json", manifest)
    return manifest


# --------------------------------------------------------------------------
# comparison


def compare_runs(dirs: list[Path], out: Path) -> dict:
    """Merge per-iteration logs, plot F/RES/RE against time, report time-to-target ratios.

    The first directory is the reference; its final F is the target.
    """
    if len(dirs) < 2:
        raise ConfigError(["compare needs at least two result directories"])
    runs = []
    for d in dirs:
        try:
            manifest = json.loads((Path(d) / "manifest.json").read_text())
            records = read_records_csv(Path(d) / "records.csv")
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError([f"unreadable result directory {d}: {exc}"]) from None
        runs.append((Path(d), manifest, records))
    hashes = {m.get("data_sha256") for _, m, _ in runs}
    if len(hashes) != 1:
        raise ConfigError(["results come from different data (data_sha256 differs)"])
    out.mkdir(parents=True, exist_ok=True)
    labels = [f"{m.get('algo', '?')}:{d.name}" for d, m, _ in runs]
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("run",) + IterationRecord.CSV_FIELDS)
        for label, (_, _, records) in zip(labels, runs):
            for r in records:
                w.writerow([label, r.k, r.kind, repr(r.cpu_seconds), repr(r.F), repr(r.RES), repr(r.RE)])
    target = runs[0][2][-1].F
    t_ref = time_to_target(runs[0][2], target)
    summary = {"target_F": target, "reference": labels[0], "runs": []}
    for label, (_, _, records) in zip(labels, runs):
        t = time_to_target(records, target)
        summary["runs"].append({"run": label, "final_F": records[-1].F, "final_RE": records[-1].RE,
                                "time_to_target": t, "speedup": t_ref / t if t > 0 else math.inf})
    summary["plots"] = _plot_comparison(labels, [r for _, _, r in runs], out)
    _write_json(out / "summary.json", summary)
    return summary


def _plot_comparison(labels, runs, out: Path) -> list[str]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for metric in ("F", "RES", "RE"):
        if all(math.isnan(getattr(r, metric)) for recs in runs for r in recs):
            log.warning("no %s values logged; skipping its plot", metric)
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, recs in zip(labels, runs):
            t = [r.cpu_seconds for r in recs]
            v = [getattr(r, metric) for r in recs]
            (line,) = ax.plot(t, v, label=label)
            rec_t = [r.cpu_seconds for r in recs if r.kind == "recursive"]
            rec_v = [getattr(r, metric) for r in recs if r.kind == "recursive"]
            if rec_t:
                ax.plot(rec_t, rec_v, "h", color=line.get_color(), markersize=7)
        ax.set_xlabel("cpu seconds")
        ax.set_ylabel(metric)
        if metric == "F":
            ax.set_yscale("log")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / f"{metric}.png", dpi=100)
        plt.close(fig)
        written.append(f"{metric}.png")
    return written


# --------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patmg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"patmg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic data bundle")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, help="overrides [experiment] seed")
    s.add_argument("--threads", type=int, default=1)

    r = sub.add_parser("reconstruct", help="reconstruct an image from a bundle")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--data", required=True, type=Path, help="bundle directory from simulate")
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--algo", choices=ALGORITHMS, default="fista")
    r.add_argument("--max-iters", type=int)
    r.add_argument("--seed", type=int, default=0, help="power-method start vector seed")
    r.add_argument("--threads", type=int, default=1)

    c = sub.add_parser("compare", help="merge and plot result directories")
    c.add_argument("runs", nargs="+", type=Path)
    c.add_argument("--out", required=True, type=Path)

    sub.add_parser("defaults", help="print a configuration with every default value")
    return p


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    bundle = simulate_experiment(cfg, seed, args.threads)
    manifest = write_bundle(bundle, cfg, args.out, seed)
    log.info("wrote bundle %s (data %s)", args.out, manifest["data_sha256"][:12])
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = load_config(args.config)
    manifest, data, phantom = load_bundle(args.data, cfg)
    op = build_operator(cfg, args.threads)
    sim_grid = Grid(**{k: tuple(v) if isinstance(v, list) else v
                       for k, v in manifest["simulation_grid"].items()})
    result = run_reconstruction(cfg, op, data, args.algo, phantom, sim_grid, args.max_iters, args.seed)
    write_result(result, cfg, args.algo, args.out, manifest,
                 {"bundle": str(args.data), "threads": args.threads, "power_seed": args.seed})
    last = result.records[-1]
    print(f"{args.algo}: {len(result.records)} iterations, F={last.F:.6g}, RE={last.RE:.2f}%, "
          f"{last.cpu_seconds:.1f}s")
    return EXIT_OK


def cmd_compare(args) -> int:
    summary = compare_runs(args.runs, args.out)
    print(f"target F = {summary['target_F']:.6g} (final F of {summary['reference']})")
    for run in summary["runs"]:
        print(f"  {run['run']:<30} final F {run['final_F']:.6g}  time to target "
              f"{run['time_to_target']:.1f}s  speedup {run['speedup']:.2f}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "defaults":
            sys.stdout.write(default_config_text())
            return EXIT_OK
        return {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
                "compare": cmd_compare}[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
