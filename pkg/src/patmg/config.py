"""Experiment configuration: INI sections whose values are JSON literals.

One file fixes the reconstruction and simulation grids, medium layers,
phantom, sensors, noise, optimiser and multigrid parameters.  Loading
collects every violated constraint before raising.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import Grid, SensorArray
from .measurement import PhantomSpec, layered_medium, make_phantom, smooth_medium, vessel_phantom_spec
from .multigrid import MgConfig
from .optim import ObjectiveConfig


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class GridSection:
    dims: list
    spacing: float
    pml_thickness: int = 16
    pml_alpha_max: float = 2.0


@dataclass
class TimeSection:
    nt: int = 400
    cfl: float = 0.3


@dataclass
class MediumSection:
    y: float = 1.5
    background: dict = field(default_factory=lambda: {"c0": 1500.0, "rho0": 1000.0, "alpha0": 0.75})
    layers: list = field(default_factory=list)
    smooth: bool = True


@dataclass
class PerturbationSection:
    awgn_db: float = math.inf
    shift_fraction: float = 0.0


@dataclass
class PhantomSection:
    kind: str = "vessels"
    seed: int = 0
    radius_fraction: float = 0.75
    n_trunks: int = 3
    depth: int = 3
    vessel_radius: float | None = None
    amplitude: float = 2.0
    discs: list = field(default_factory=list)
    vessels: list = field(default_factory=list)


@dataclass
class SensorSection:
    radius: float
    count: int = 200
    start_deg: float = 90.0
    stop_deg: float = 270.0


@dataclass
class NoiseSection:
    snr_db: float = math.inf


@dataclass
class OptimizerSection:
    lam: float = 1e-2
    rho_tv: float = 1e-2
    prox_iters: int = 20
    max_iters: int = 100
    eps_d: float = 1e-3
    step_scale_ista: float = 2.0
    step_scale_fista: float = 1.0
    power_iters: int = 30


@dataclass
class ExperimentConfig:
    name: str
    seed: int
    grid: GridSection
    simulation: GridSection
    time: TimeSection
    medium: MediumSection
    perturbation: PerturbationSection
    phantom: PhantomSection
    sensors: SensorSection
    noise: NoiseSection
    optimizer: OptimizerSection
    multigrid: MgConfig
    source_text: str = ""

    # ---- derived objects -------------------------------------------------
    def c_max(self) -> float:
        speeds = [self.medium.background["c0"]] + [l["c0"] for l in self.medium.layers if "c0" in l]
        return float(max(speeds))

    def dt(self) -> float:
        finest = min(self.grid.spacing, self.simulation.spacing)
        return self.time.cfl * finest / self.c_max()

    def _make_grid(self, sec: GridSection) -> Grid:
        return Grid(tuple(sec.dims), (sec.spacing,) * len(sec.dims), sec.pml_thickness,
                    sec.pml_alpha_max, self.dt(), self.time.nt, self.c_max())

    def recon_grid(self) -> Grid:
        return self._make_grid(self.grid)

    def sim_grid(self) -> Grid:
        return self._make_grid(self.simulation)

    def sensor_array(self) -> SensorArray:
        s = self.sensors
        return SensorArray.arc(s.radius, s.count, math.radians(s.start_deg), math.radians(s.stop_deg))

    def medium_on(self, grid: Grid):
        m = layered_medium(grid, self.medium.layers, self.medium.background, self.medium.y)
        return smooth_medium(m) if self.medium.smooth else m

    def phantom_spec(self) -> PhantomSpec:
        ph = self.phantom
        if ph.kind == "vessels":
            return vessel_phantom_spec(ph.radius_fraction * self.sensors.radius, ph.seed,
                                       ph.n_trunks, ph.depth, ph.vessel_radius, ph.amplitude)
        return PhantomSpec.from_dict({"discs": ph.discs, "vessels": ph.vessels})

    def phantom_on(self, grid: Grid) -> np.ndarray:
        return make_phantom(grid, self.phantom_spec())

    def objective_config(self, algo: str, max_iters: int | None = None) -> ObjectiveConfig:
        o = self.optimizer
        scale = o.step_scale_ista if algo.endswith("ista") and not algo.endswith("fista") else o.step_scale_fista
        return ObjectiveConfig(o.lam, True, o.rho_tv, o.prox_iters, scale,
                               max_iters if max_iters is not None else o.max_iters, o.eps_d)

    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "source_text":
                continue
            v = getattr(self, f.name)
            out[f.name] = asdict(v) if hasattr(v, "__dataclass_fields__") else v
        return out


SECTIONS = {
    "grid": GridSection, "simulation": GridSection, "time": TimeSection,
    "medium": MediumSection, "perturbation": PerturbationSection, "phantom": PhantomSection,
    "sensors": SensorSection, "noise": NoiseSection, "optimizer": OptimizerSection,
    "multigrid": MgConfig,
}
REQUIRED = ("grid", "simulation", "sensors")


def _parse_value(raw: str):
    raw = raw.strip()
    if raw in ("inf", "+inf", "Infinity"):
        return math.inf
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    problems = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    unknown = set(parser.sections()) - set(SECTIONS) - {"experiment"}
    problems += [f"unknown section [{s}]" for s in sorted(unknown)]
    built = {}
    for name, cls in SECTIONS.items():
        if name not in parser:
            if name in REQUIRED:
                problems.append(f"missing section [{name}]")
                continue
            values = {}
        else:
            values = {k: _parse_value(v) for k, v in parser[name].items()}
        known = {f.name for f in fields(cls)}
        for k in sorted(set(values) - known):
            problems.append(f"[{name}] unknown key {k!r}")
        try:
            built[name] = cls(**{k: v for k, v in values.items() if k in known})
        except (TypeError, ValueError) as exc:
            problems.append(f"[{name}] {exc}")
    exp = parser["experiment"] if "experiment" in parser else {}
    name = _parse_value(exp.get("name", '"experiment"'))
    seed = _parse_value(exp.get("seed", "0"))
    if problems:
        raise ConfigError(problems)
    cfg = ExperimentConfig(str(name), int(seed), source_text=text, **built)
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every violated cross-section constraint, as readable strings."""
    problems = []
    for label, sec in (("grid", cfg.grid), ("simulation", cfg.simulation)):
        if len(sec.dims) not in (2, 3):
            problems.append(f"[{label}] dims must have 2 or 3 entries")
            continue
        if min(sec.dims) < 8:
            problems.append(f"[{label}] every dims entry must be >= 8")
        if not sec.spacing > 0:
            problems.append(f"[{label}] spacing must be positive")
        if not 0 <= sec.pml_thickness < min(sec.dims) / 2:
            problems.append(f"[{label}] pml_thickness must be below min(dims)/2")
    if problems:
        return problems
    g, s = cfg.grid, cfg.simulation
    if any(n % 2 for n in g.dims) or g.pml_thickness % 2:
        problems.append("[grid] dims and pml_thickness must be even for coarsening")
    if cfg.time.nt % 2:
        problems.append("[time] nt must be even for coarsening")
    if list(g.dims) == list(s.dims) and g.spacing == s.spacing:
        problems.append("simulation and reconstruction grids must differ")
    rext = [(n - 2 * g.pml_thickness) * g.spacing for n in g.dims]
    sext = [(n - 2 * s.pml_thickness) * s.spacing for n in s.dims]
    if len(rext) != len(sext) or not np.allclose(rext, sext, rtol=1e-9):
        problems.append(f"interior extents differ: grid {rext} vs simulation {sext}")
    half = min(rext) / 2
    if not 0 < cfg.sensors.radius < half - 2 * g.spacing:
        problems.append("[sensors] radius must lie inside the reconstruction interior")
    if cfg.sensors.count < 1:
        problems.append("[sensors] count must be positive")
    if not 1 < cfg.medium.y < 3:
        problems.append("[medium] y must lie in (1, 3)")
    if cfg.phantom.kind not in ("vessels", "shapes"):
        problems.append("[phantom] kind must be 'vessels' or 'shapes'")
    if not 0 < cfg.time.cfl <= 0.5:
        problems.append("[time] cfl must lie in (0, 0.5]")
    for algo in ("ista", "fista"):
        try:
            cfg.objective_config(algo)
        except ValueError as exc:
            problems.append(f"[optimizer] {exc}")
    if cfg.optimizer.step_scale_fista > 1:
        problems.append("[optimizer] step_scale_fista must be <= 1")
    return problems


def default_config_text() -> str:
    """The defaults of every section, as an INI document."""
    lines = ["[experiment]", 'name = "experiment"', "seed = 0", ""]
    for name, cls in SECTIONS.items():
        lines.append(f"[{name}]")
        for f in fields(cls):
            if f.default is not MISSING:
                value = f.default
            elif f.default_factory is not MISSING:
                value = f.default_factory()
            else:
                lines.append(f"{f.name} = null  ; required")
                continue
            lines.append(f"{f.name} = {'inf' if value == math.inf else json.dumps(value)}")
        lines.append("")
    return "\n".join(lines)
