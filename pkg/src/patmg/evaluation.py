"""Reconstruction metrics, the time-reversal baseline and image post-processing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import AcousticState, Grid, Medium, SensorData
from .fieldio import write_field
from .measurement import resample_image
from .optim import tv
from .wave import ForwardOperator, KSpaceSolver, smooth_source


def relative_error(x: np.ndarray, truth: np.ndarray, x_grid: Grid | None = None,
                   truth_grid: Grid | None = None) -> float:
    """100 ||x - truth|| / ||truth||, with x first interpolated onto the truth grid."""
    truth = np.asarray(truth, dtype=float)
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("truth image is zero")
    if x_grid is not None and truth_grid is not None:
        x = resample_image(x, x_grid, truth_grid)
    return float(100.0 * np.linalg.norm(np.asarray(x) - truth) / norm)


def _samples(data) -> np.ndarray:
    return data.samples if isinstance(data, SensorData) else np.asarray(data, dtype=float)


def residual_norm(op: ForwardOperator, x: np.ndarray, data) -> float:
    """||Hx - p||."""
    return float(np.linalg.norm(op.apply(x) - _samples(data)))


def objective(op: ForwardOperator, x: np.ndarray, data, lam: float) -> float:
    """1/2 ||Hx - p||^2 + lam TV(x); +inf when x is infeasible."""
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-12):
        return float("inf")
    r = op.apply(x) - _samples(data)
    return 0.5 * float(np.vdot(r, r)) + lam * tv(x)


def time_to_target(records, target: float) -> float:
    """cpu_seconds of the first record with F <= target, or inf if never reached."""
    for rec in records:
        if rec.F <= target:
            return rec.cpu_seconds
    return float("inf")


def time_reversal(op: ForwardOperator, data) -> np.ndarray:
    """Re-emit the time-reversed data as a Dirichlet condition at the sensors.

    Absorption changes sign so the back-propagation compensates for the loss;
    dispersion is left unchanged.  Pressure at every grid node touched by the
    sensor interpolation is overwritten each step with the interpolation-
    weighted average of the data.  Returns the final pressure on the interior.
    """
    samples = _samples(data)
    if samples.shape != op.data_shape:
        raise ValueError(f"data shape {samples.shape} != {op.data_shape}")
    g, m = op.grid, op.medium
    flipped = Medium(m.c0, m.rho0, m.alpha0, m.y, -m.tau, m.eta)
    solver = KSpaceSolver(g, flipped, op.sensors, workers=op.workers)
    weight = solver.MT @ np.ones(op.sensors.count)
    mask = weight > 0
    density_scale = 1.0 / (solver.d * solver.c2.ravel()[mask])
    # t_index 1: a running state, so the first step is a full leapfrog step
    state = AcousticState.zeros(g.dims)
    state.t_index = 1
    for n in range(g.nt - 1, -1, -1):
        values = (solver.MT @ samples[:, n])[mask] / weight[mask]
        state.p.ravel()[mask] = values
        for r in state.rho:
            r.ravel()[mask] = values * density_scale
        if n > 0:
            state = solver.step(state)
    image = state.p[g.interior]
    if op.smoothing:
        image = smooth_source(image, op.workers)
    return image


def threshold_image(x: np.ndarray, a: float = 0.1) -> np.ndarray:
    """thres(2 x / max|x|, a): rescale so the peak is 2, zero everything below a."""
    x = np.asarray(x, dtype=float)
    peak = np.max(np.abs(x))
    if peak == 0:
        raise ValueError("cannot rescale an all-zero image")
    v = 2.0 * x / peak
    return np.where(v >= a, v, 0.0)


def max_intensity_projection(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.max(np.asarray(x), axis=axis)


def visualize(x: np.ndarray, path=None, a: float = 0.1, grid: Grid | None = None,
              cmap: str = "hot") -> np.ndarray:
    """Threshold for display and optionally write ``<path>.png`` plus the raw field.

    3D volumes are shown as a row of maximum-intensity projections.
    """
    shown = threshold_image(x, a)
    if path is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        path = Path(path)
        meta = {"threshold": a, "units": "Pa (rescaled)"}
        if grid is not None:
            meta["spacing"] = list(grid.spacing)
        write_field(path.with_suffix(".field"), shown, meta)
        views = [shown] if shown.ndim == 2 else [max_intensity_projection(shown, ax)
                                                 for ax in range(shown.ndim)]
        fig, axes = plt.subplots(1, len(views), figsize=(4 * len(views), 4), squeeze=False)
        for axis, view in zip(axes[0], views):
            axis.imshow(view.T, origin="lower", cmap=cmap, vmin=0, vmax=2)
            axis.set_axis_off()
        fig.savefig(path.with_suffix(".png"), dpi=100, bbox_inches="tight")
        plt.close(fig)
    return shown
