"""Fixed-grid proximal-gradient solvers for TV-regularised least squares.

Minimises F(x) = 1/2 ||Hx - p||^2 + lam TV(x) over x >= 0 with ISTA or
FISTA.  The TV proximal map is solved with the fast gradient projection
method on the dual; the step size comes from a power-method estimate of
||H*H||, cached on disk per operator.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import DivergenceError

# --------------------------------------------------------------------------
# discrete TV


def gradient(x: np.ndarray) -> np.ndarray:
    """Forward differences with a zero last difference (Neumann boundary)."""
    g = np.zeros((x.ndim,) + x.shape)
    for ax in range(x.ndim):
        idx = [slice(None)] * x.ndim
        idx[ax] = slice(0, -1)
        g[(ax, *idx)] = np.diff(x, axis=ax)
    return g


def divergence(q: np.ndarray) -> np.ndarray:
    """Negative transpose of :func:`gradient`."""
    out = np.zeros(q.shape[1:])
    for ax in range(q.shape[0]):
        qa = q[ax].copy()
        idx = [slice(None)] * qa.ndim
        idx[ax] = -1
        qa[tuple(idx)] = 0.0
        out += np.diff(qa, axis=ax, prepend=0.0)
    return out


def tv(x: np.ndarray) -> float:
    """Isotropic total variation."""
    g = gradient(x)
    return float(np.sum(np.sqrt(np.sum(g * g, axis=0))))


def tv_smooth_value(x: np.ndarray, rho_tv: float) -> float:
    """Sum over pixels of sqrt(|grad x|^2 + rho^2) - rho."""
    if rho_tv <= 0:
        raise ValueError("rho_tv must be positive")
    g = gradient(x)
    return float(np.sum(np.sqrt(np.sum(g * g, axis=0) + rho_tv ** 2) - rho_tv))


def tv_smooth_grad(x: np.ndarray, rho_tv: float) -> np.ndarray:
    """Gradient of :func:`tv_smooth_value`: -div(grad x / sqrt(|grad x|^2 + rho^2))."""
    if rho_tv <= 0:
        raise ValueError("rho_tv must be positive")
    g = gradient(x)
    norm = np.sqrt(np.sum(g * g, axis=0) + rho_tv ** 2)
    return -divergence(g / norm)


def gradient_norm_sq_bound(ndim: int) -> float:
    """Upper bound on ||gradient||^2 for forward differences."""
    return 4.0 * ndim


def prox_tv(z: np.ndarray, lam: float, alpha: float, nonneg: bool = True,
            prox_iters: int = 20) -> np.ndarray:
    """argmin_x lam TV(x) + indicator(x >= 0) + ||x - z||^2 / (2 alpha).

    Fast gradient projection on the dual (Beck and Teboulle), with the
    projection onto [0, inf) folded into the primal recovery.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    project = (lambda v: np.maximum(v, 0.0)) if nonneg else (lambda v: v)
    weight = lam * alpha
    if weight == 0:
        return project(z)
    step = 1.0 / (gradient_norm_sq_bound(z.ndim) * weight)
    q = np.zeros((z.ndim,) + z.shape)
    r = q.copy()
    t = 1.0
    for _ in range(prox_iters):
        x = project(z + weight * divergence(r))
        q_new = r + step * weight * gradient(x)
        norm = np.sqrt(np.sum(q_new * q_new, axis=0))
        q_new /= np.maximum(norm, 1.0)
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        r = q_new + ((t - 1) / t_new) * (q_new - q)
        q, t = q_new, t_new
    return project(z + weight * divergence(q))


# --------------------------------------------------------------------------
# Lipschitz constant


def cache_dir() -> Path:
    return Path(os.environ.get("PATMG_CACHE_DIR", Path.home() / ".cache" / "patmg"))


@dataclass
class LipschitzEstimate:
    value: float
    rayleigh: list
    converged: bool
    cache_hit: bool = False


def lipschitz(op, iters: int = 30, seed: int = 0, use_cache: bool = True,
              tol: float = 1e-3) -> LipschitzEstimate:
    """Largest eigenvalue of H*H by the power method.

    ``op`` needs ``apply``, ``apply_adjoint`` and ``image_shape``.  When it
    also has ``fingerprint()`` the result is cached under PATMG_CACHE_DIR.
    """
    if iters < 10:
        raise ValueError("use at least 10 power iterations")
    path = None
    if use_cache and hasattr(op, "fingerprint"):
        key = hashlib.sha256(op.fingerprint() + f"|{iters}|{seed}".encode()).hexdigest()
        path = cache_dir() / f"lipschitz-{key[:32]}.json"
        if path.exists():
            blob = json.loads(path.read_text())
            return LipschitzEstimate(blob["value"], blob["rayleigh"], blob["converged"], True)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.image_shape)
    x /= np.linalg.norm(x)
    rayleigh = []
    for _ in range(iters):
        y = op.apply_adjoint(op.apply(x))
        rayleigh.append(float(np.vdot(x, y)))
        norm = np.linalg.norm(y)
        if norm == 0:
            break
        x = y / norm
    value = rayleigh[-1]
    converged = len(rayleigh) < 2 or abs(rayleigh[-1] - rayleigh[-2]) <= tol * abs(value)
    if not converged:
        warnings.warn(f"power method not converged after {iters} iterations", RuntimeWarning)
    est = LipschitzEstimate(value, rayleigh, converged)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"value": value, "rayleigh": rayleigh, "converged": converged}))
    return est


# --------------------------------------------------------------------------
# problem and solvers


@dataclass
class ObjectiveConfig:
    lam: float = 1e-2
    nonneg: bool = True
    rho_tv: float = 1e-2
    prox_iters: int = 20
    step_scale: float = 1.0
    max_iters: int = 100
    eps_d: float = 1e-3

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.rho_tv > 0:
            raise ValueError("rho_tv must be positive")
        if not 0 < self.step_scale <= 2:
            raise ValueError("step_scale must lie in (0, 2]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class IterationRecord:
    k: int
    cpu_seconds: float
    F: float
    RES: float
    RE: float = float("nan")
    kind: str = "direct"

    CSV_FIELDS = ("k", "kind", "cpu_seconds", "F", "RES", "RE")


def write_records_csv(path, records: Sequence[IterationRecord]) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(IterationRecord.CSV_FIELDS)
        for r in records:
            w.writerow([r.k, r.kind, repr(r.cpu_seconds), repr(r.F), repr(r.RES), repr(r.RE)])


def read_records_csv(path) -> list[IterationRecord]:
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [IterationRecord(int(r["k"]), float(r["cpu_seconds"]), float(r["F"]),
                            float(r["RES"]), float(r["RE"]), r["kind"]) for r in rows]


@dataclass(eq=False)
class LeastSquaresTV:
    """One level of the reconstruction problem: operator, data, weight, L_f."""

    op: object
    data: np.ndarray
    lam: float
    lipschitz: float

    def residual_norm(self, Hx):
        return float(np.linalg.norm(Hx - self.data))

    def objective(self, x, Hx):
        r = Hx - self.data
        return 0.5 * float(np.vdot(r, r)) + self.lam * tv(x)

    def grad_data(self, Hx):
        return self.op.apply_adjoint(Hx - self.data)

    def apply(self, x):
        if not np.any(x):
            return np.zeros(self.data.shape)
        return self.op.apply(x)


def grad_data(op, x, data) -> np.ndarray:
    """Gradient of 1/2 ||Hx - data||^2, i.e. H*(Hx - data)."""
    return op.apply_adjoint(op.apply(x) - data)


# hook(k, y, grad_f_y) -> None for a direct step or (x, Hx) for a recursive one
StepHook = Callable[[int, np.ndarray, np.ndarray], "tuple | None"]


def proximal_gradient(problem: LeastSquaresTV, config: ObjectiveConfig, momentum: bool,
                      x0: np.ndarray | None = None, error_fn=None, callbacks=(),
                      hook: StepHook | None = None, zero_theta: bool = False):
    """Shared ISTA/FISTA loop.

    Every iteration costs one adjoint (gradient at y) and one forward (H x_k);
    H y is formed from stored forward results by linearity.  Stops when the
    relative decrease of F drops below ``eps_d`` or after ``max_iters``.
    """
    shape = problem.op.image_shape
    x_prev = np.zeros(shape) if x0 is None else np.array(x0, dtype=float)
    Hx_prev = problem.apply(x_prev)
    F_prev = problem.objective(x_prev, Hx_prev)
    F_start = F_prev
    alpha = config.step_scale / problem.lipschitz
    y, Hy, t = x_prev, Hx_prev, 1.0
    records = []
    elapsed = 0.0
    for k in range(1, config.max_iters + 1):
        tic = time.perf_counter()
        g = problem.grad_data(Hy)
        step = hook(k, y, g) if hook is not None else None
        if step is None:
            kind = "direct"
            x = prox_tv(y - alpha * g, problem.lam, alpha, config.nonneg, config.prox_iters)
            Hx = problem.apply(x)
        else:
            kind = "recursive"
            x, Hx = step
        F = problem.objective(x, Hx)
        if not math.isfinite(F) or F > 10 * max(F_start, np.finfo(float).tiny):
            raise DivergenceError(f"objective diverged at iteration {k}: F={F:.4g}, F0={F_start:.4g}")
        if momentum and not zero_theta:
            t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
            theta = (t - 1) / t_next
            t = t_next
        else:
            theta = 0.0
        y = x + theta * (x - x_prev)
        Hy = Hx + theta * (Hx - Hx_prev)
        elapsed += time.perf_counter() - tic
        rec = IterationRecord(k, elapsed, F, problem.residual_norm(Hx),
                              float(error_fn(x)) if error_fn is not None else float("nan"), kind)
        records.append(rec)
        for cb in callbacks:
            cb(rec, x)
        stop = (F_prev - F) / max(F_prev, F) < config.eps_d if max(F_prev, F) > 0 else True
        x_prev, Hx_prev, F_prev = x, Hx, F
        if stop:
            break
    return x_prev, records


def ista(problem: LeastSquaresTV, config: ObjectiveConfig, **kwargs):
    """ISTA: gradient step on the data term, then the TV prox."""
    return proximal_gradient(problem, config, momentum=False, **kwargs)


def fista(problem: LeastSquaresTV, config: ObjectiveConfig, **kwargs):
    """FISTA: ISTA steps taken from an extrapolated point."""
    if config.step_scale > 1:
        raise ValueError("FISTA needs step_scale <= 1")
    return proximal_gradient(problem, config, momentum=True, **kwargs)


def fista_momentum(t: float) -> tuple[float, float]:
    """Return (t_next, theta) of the FISTA extrapolation sequence."""
    t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
    return t_next, (t - 1) / t_next


__all__ = [
    "IterationRecord", "LeastSquaresTV", "LipschitzEstimate", "ObjectiveConfig",
    "divergence", "fista", "fista_momentum", "grad_data", "gradient", "ista",
    "lipschitz", "prox_tv", "proximal_gradient", "read_records_csv", "tv",
    "tv_smooth_grad", "tv_smooth_value", "write_records_csv",
]
