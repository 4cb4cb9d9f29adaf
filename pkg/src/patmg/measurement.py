"""Experiment data generation: phantoms, noisy data, perturbed media, resampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import Grid, Medium, SensorData, derive_loss_coefficients
from .wave import smooth_source


# --------------------------------------------------------------------------
# phantoms


@dataclass
class Disc:
    center: tuple
    radius: float
    amplitude: float = 1.0


@dataclass
class Vessel:
    start: tuple
    end: tuple
    radius: float
    amplitude: float = 1.0


@dataclass
class PhantomSpec:
    discs: list = field(default_factory=list)
    vessels: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, blob: dict) -> "PhantomSpec":
        return cls([Disc(tuple(d["center"]), d["radius"], d.get("amplitude", 1.0))
                    for d in blob.get("discs", [])],
                   [Vessel(tuple(v["start"]), tuple(v["end"]), v["radius"], v.get("amplitude", 1.0))
                    for v in blob.get("vessels", [])])


def _interior_mesh(grid: Grid):
    axes = [grid.interior_coordinates(ax) for ax in range(grid.ndim)]
    return np.meshgrid(*axes, indexing="ij")


def _check_inside(grid: Grid, points, radius):
    half = [0.5 * e for e in grid.extent]
    for p in points:
        if len(p) != grid.ndim:
            raise ValueError(f"point {p} has wrong dimension")
        if any(abs(c) + radius > h for c, h in zip(p, half)):
            raise ValueError(f"primitive at {p} with radius {radius} leaves the interior")


def make_phantom(grid: Grid, spec: PhantomSpec | dict) -> np.ndarray:
    """Rasterise discs and vessel segments; overlaps take the larger amplitude."""
    if isinstance(spec, dict):
        spec = PhantomSpec.from_dict(spec)
    mesh = _interior_mesh(grid)
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    image = np.zeros(pts.shape[0])
    for disc in spec.discs:
        _check_inside(grid, [disc.center], disc.radius)
        dist = np.linalg.norm(pts - np.asarray(disc.center), axis=1)
        image = np.where(dist <= disc.radius, np.maximum(image, disc.amplitude), image)
    for v in spec.vessels:
        _check_inside(grid, [v.start, v.end], v.radius)
        a, b = np.asarray(v.start, float), np.asarray(v.end, float)
        ab = b - a
        denom = float(ab @ ab)
        s = np.clip((pts - a) @ ab / denom, 0.0, 1.0) if denom > 0 else np.zeros(len(pts))
        dist = np.linalg.norm(pts - (a + s[:, None] * ab), axis=1)
        image = np.where(dist <= v.radius, np.maximum(image, v.amplitude), image)
    return image.reshape(grid.interior_shape)


def vessel_phantom_spec(radius: float, seed: int, n_trunks: int = 3, depth: int = 3,
                        vessel_radius: float | None = None, amplitude: float = 2.0,
                        ndim: int = 2) -> PhantomSpec:
    """Random branching vessel tree inside a disc of the given radius.

    Trunk segments carry the full amplitude; branches get a random fraction
    of it, so the image maximum equals ``amplitude``.
    """
    if ndim != 2:
        raise ValueError("vessel trees are generated in 2D only")
    rng = np.random.default_rng(seed)
    vr = vessel_radius if vessel_radius is not None else radius / 40
    vessels = []
    for _ in range(n_trunks):
        ang = rng.uniform(0, 2 * np.pi)
        start = 0.85 * radius * np.array([np.cos(ang), np.sin(ang)])
        heading = ang + np.pi + rng.uniform(-0.4, 0.4)
        stack = [(start, heading, 0.45 * radius, amplitude, 0)]
        while stack:
            p, head, length, amp, level = stack.pop()
            end = p + length * np.array([np.cos(head), np.sin(head)])
            if np.linalg.norm(end) > 0.9 * radius:
                end = end * (0.9 * radius / np.linalg.norm(end))
            vessels.append(Vessel(tuple(p), tuple(end), vr * (0.8 ** level), amp))
            if level + 1 < depth:
                for sign in (-1, 1):
                    stack.append((end, head + sign * rng.uniform(0.3, 0.8), 0.7 * length,
                                  amp * rng.uniform(0.5, 1.0), level + 1))
    return PhantomSpec([], vessels)


# --------------------------------------------------------------------------
# noise and media


def add_awgn(data, snr_db: float, seed: int) -> SensorData:
    """Add white Gaussian noise at a given SNR (dB) relative to the mean signal power."""
    samples = data.samples if isinstance(data, SensorData) else np.asarray(data, float)
    dt = data.dt if isinstance(data, SensorData) else float("nan")
    if math.isinf(snr_db) and snr_db > 0:
        return SensorData(samples.copy(), dt)
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    power = float(np.mean(samples ** 2))
    if power == 0:
        raise ValueError("signal is identically zero; SNR is undefined")
    sigma = math.sqrt(power / 10 ** (snr_db / 10))
    noise = np.random.default_rng(seed).normal(0.0, sigma, samples.shape)
    return SensorData(samples + noise, dt)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    return 10 * math.log10(np.mean(clean ** 2) / np.mean((noisy - clean) ** 2))


def smooth_medium(medium: Medium) -> Medium:
    """Apply the source smoothing window to the sound-speed, density and absorption maps."""
    maps = {name: smooth_source(getattr(medium, name)) for name in ("c0", "rho0")}
    if np.any(medium.alpha0):
        maps["alpha0"] = np.clip(smooth_source(medium.alpha0), 0.0, None)
    return medium.with_maps(**maps)


def radial_shift(values: np.ndarray, grid: Grid, shift: float) -> np.ndarray:
    """Move every circular interface centred on the origin outward by ``shift`` metres."""
    axes = [grid.axis_coordinates(ax) for ax in range(grid.ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum(m * m for m in mesh))
    src_r = np.clip(r - shift, 0.0, None)
    scale = np.divide(src_r, r, out=np.zeros_like(r), where=r > 0)
    coords = [(m * scale) / h + (n - 1) / 2
              for m, h, n in zip(mesh, grid.spacing, grid.dims)]
    return ndimage.map_coordinates(values, coords, order=1, mode="nearest")


def perturb_medium(medium: Medium, grid: Grid, awgn_db: float = math.inf,
                   interface_shift: float = 0.0, seed: int = 0, smooth: bool = False) -> Medium:
    """Data-generation medium: shifted interfaces, per-map AWGN, then optional smoothing.

    ``interface_shift`` is in metres (radial, outward).  Noise power on each
    map is that map's mean square divided by 10^(awgn_db/10).
    """
    if abs(interface_shift) >= 0.5 * min(n * h for n, h in zip(grid.dims, grid.spacing)):
        raise ValueError("interface shift exceeds the domain")
    if math.isinf(awgn_db) and interface_shift == 0 and not smooth:
        return medium
    rng = np.random.default_rng(seed)
    maps = {}
    for name in ("c0", "rho0", "alpha0"):
        m = np.asarray(getattr(medium, name), dtype=float)
        if interface_shift:
            m = radial_shift(m, grid, interface_shift)
        if math.isfinite(awgn_db) and np.any(m):
            sigma = math.sqrt(np.mean(m ** 2) / 10 ** (awgn_db / 10))
            m = m + rng.normal(0.0, sigma, m.shape)
        if name == "alpha0":
            m = np.clip(m, 0.0, None)
        maps[name] = m
    out = medium.with_maps(**maps)
    return smooth_medium(out) if smooth else out


def layered_medium(grid: Grid, layers: list, background: dict, y: float = 1.5) -> Medium:
    """Concentric layers: each entry has ``radius`` plus any of c0/rho0/alpha0.

    Layers are painted from the largest radius inward over the background.
    """
    axes = [grid.axis_coordinates(ax) for ax in range(grid.ndim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum(m * m for m in mesh))
    maps = {k: np.full(grid.dims, float(background[k])) for k in ("c0", "rho0", "alpha0")}
    for layer in sorted(layers, key=lambda l: -l["radius"]):
        inside = r <= layer["radius"]
        for k in maps:
            if k in layer:
                maps[k][inside] = layer[k]
    return derive_loss_coefficients(maps["c0"], maps["rho0"], maps["alpha0"], y)


# --------------------------------------------------------------------------
# resampling


def resample_image(image: np.ndarray, from_grid: Grid, to_grid: Grid) -> np.ndarray:
    """Multilinear interpolation between interiors covering the same extent."""
    if from_grid.ndim != to_grid.ndim or not np.allclose(from_grid.extent, to_grid.extent,
                                                         rtol=1e-9, atol=0):
        raise ValueError(f"extent mismatch: {from_grid.extent} vs {to_grid.extent}")
    image = np.asarray(image, dtype=float)
    if image.shape != from_grid.interior_shape:
        raise ValueError("image does not live on the source grid interior")
    if from_grid.interior_shape == to_grid.interior_shape:
        return image.copy()
    src = [from_grid.interior_coordinates(ax) for ax in range(from_grid.ndim)]
    dst = [to_grid.interior_coordinates(ax) for ax in range(to_grid.ndim)]
    idx = [(d - s[0]) / (s[1] - s[0]) for s, d in zip(src, dst)]
    coords = np.meshgrid(*idx, indexing="ij")
    return ndimage.map_coordinates(image, coords, order=1, mode="nearest")
