"""Two-level multigrid proximal-gradient reconstruction.

A fine iteration either takes the usual ISTA/FISTA step or, when the
restricted gradient is large relative to the fine one and the iterate has
moved enough since the last coarse correction, solves a smoothed and
first-order coherent coarse problem

    phi(x) = 1/2 ||H_c x - p_c||^2 + lam TV_rho(x) + <v, x>,   x >= lower,

with v = R grad F_rho(y) - grad F_c,rho(R y), and prolongs the correction.
The lower bound makes every prolonged correction keep the fine iterate
non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import ndimage, signal, sparse

from .core import SensorArray
from .optim import (
    LeastSquaresTV,
    ObjectiveConfig,
    lipschitz,
    proximal_gradient,
    tv_smooth_grad,
    tv_smooth_value,
)
from .wave import ForwardOperator


# --------------------------------------------------------------------------
# transfer operators


@lru_cache(maxsize=None)
def _prolong_1d(n_coarse: int) -> sparse.csr_matrix:
    """Cell-centred linear interpolation, constant extension at the ends."""
    rows, cols, vals = [], [], []
    for j in range(n_coarse):
        for fine, nb in ((2 * j, j - 1), (2 * j + 1, j + 1)):
            nb = min(max(nb, 0), n_coarse - 1)
            rows += [fine, fine]
            cols += [j, nb]
            vals += [0.75, 0.25]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(2 * n_coarse, n_coarse))


@lru_cache(maxsize=None)
def prolongation_matrix(coarse_shape: tuple[int, ...]) -> sparse.csr_matrix:
    mat = sparse.identity(1, format="csr")
    for n in coarse_shape:
        mat = sparse.kron(mat, _prolong_1d(n), format="csr")
    return mat


@lru_cache(maxsize=None)
def restriction_matrix(fine_shape: tuple[int, ...]) -> sparse.csr_matrix:
    """Full weighting: the transpose of prolongation divided by 2^d."""
    if any(n % 2 for n in fine_shape):
        raise ValueError(f"fine shape {fine_shape} must be even along every axis")
    coarse = tuple(n // 2 for n in fine_shape)
    return (prolongation_matrix(coarse).T / 2 ** len(fine_shape)).tocsr()


def restrict(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    R = restriction_matrix(x.shape)
    return (R @ x.ravel()).reshape(tuple(n // 2 for n in x.shape))


def prolong(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    P = prolongation_matrix(x.shape)
    return (P @ x.ravel()).reshape(tuple(2 * n for n in x.shape))


def restriction_norm(fine_shape) -> float:
    """Spectral norm of the restriction matrix."""
    from scipy.sparse.linalg import svds
    R = restriction_matrix(tuple(fine_shape))
    if min(R.shape) < 3:
        return float(np.linalg.norm(R.toarray(), 2))
    return float(svds(R, k=1, return_singular_vectors=False)[0])


def restrict_data(samples: np.ndarray) -> np.ndarray:
    """Halve the sampling rate of sensor time series (anti-aliased)."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-1] % 2:
        raise ValueError("number of time samples must be even")
    return signal.resample_poly(samples, 1, 2, axis=-1, padtype="line")


def coherence_term(restricted_fine_grad: np.ndarray, coarse_grad: np.ndarray) -> np.ndarray:
    """v such that the coarse model's gradient at R y equals R grad F(y)."""
    return restricted_fine_grad - coarse_grad


def restrict_constraints(y: np.ndarray) -> np.ndarray:
    """Lower bound on the coarse variable keeping prolonged corrections feasible.

    For each coarse node: R y minus the minimum of y over the fine nodes that
    feed it, which is the 4-wide window of the full-weighting stencil.
    """
    y = np.asarray(y, dtype=float)
    mins = ndimage.minimum_filter(y, size=4, mode="nearest")
    return restrict(y) - mins[tuple(slice(1, None, 2) for _ in range(y.ndim))]


# --------------------------------------------------------------------------
# configuration and level data


@dataclass
class MgConfig:
    """Two-level parameters.  ``q_c = 0`` turns every coarse solve into a no-op."""

    kappa: float = 0.25
    vartheta: float = 0.1
    q_d: int = 3
    q_c: int = 8
    eps_c: float = 1e-2
    eps_d: float = 1e-3
    rho_tv: float = 1e-2
    coarse_step_scale: float | None = None

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.vartheta < 1:
            raise ValueError("vartheta must lie in (0, 1)")
        if self.q_d < 1:
            raise ValueError("q_d must be at least 1")
        if self.q_c < 0:
            raise ValueError("q_c must be non-negative")
        if not self.rho_tv > 0:
            raise ValueError("rho_tv must be positive")
        if self.coarse_step_scale is not None and not 0 < self.coarse_step_scale <= 2:
            raise ValueError("coarse_step_scale must lie in (0, 2]")

    def kappa_admissible(self, fine_shape) -> bool:
        """kappa < min(1, ||R||); above that bound recursion can never fire."""
        return self.kappa < min(1.0, restriction_norm(fine_shape))


def coarse_operator(op: ForwardOperator) -> ForwardOperator:
    """Same physics on the grid with half the points, twice the spacing and dt."""
    grid = op.grid.coarsen()
    m = op.medium
    medium = m.with_maps(c0=restrict(m.c0), rho0=restrict(m.rho0), alpha0=restrict(m.alpha0))
    return ForwardOperator(grid, medium, SensorArray(op.sensors.positions, op.sensors.interp),
                           op.smoothing, op.workers)


@dataclass(eq=False)
class LevelPair:
    fine: LeastSquaresTV
    coarse: LeastSquaresTV

    @classmethod
    def build(cls, op: ForwardOperator, data: np.ndarray, lam: float,
              coarse_lam: float | None = None, power_iters: int = 30,
              use_cache: bool = True) -> "LevelPair":
        cop = coarse_operator(op)
        data = np.asarray(data, dtype=float)
        L_f = lipschitz(op, power_iters, use_cache=use_cache).value
        L_c = lipschitz(cop, power_iters, use_cache=use_cache).value
        return cls(LeastSquaresTV(op, data, lam, L_f),
                   LeastSquaresTV(cop, restrict_data(data), lam if coarse_lam is None else coarse_lam, L_c))


@dataclass
class MgInfo:
    """Diagnostics gathered during an MG run."""

    recursions: list = field(default_factory=list)   # fine iteration indices
    coarse_iters: list = field(default_factory=list)
    coherence_residuals: list = field(default_factory=list)
    min_iterate: list = field(default_factory=list)


# --------------------------------------------------------------------------
# decision rule and coarse solve


def should_recurse(restricted_grad_norm: float, grad_norm: float, y: np.ndarray,
                   y_last: np.ndarray | None, K_r: int, K_d: int, config: MgConfig) -> bool:
    """Recursion test: the restricted gradient is large enough, and either no
    recursion happened yet, the iterate moved away from the last coarse
    point, or more than q_d direct steps were taken in a row."""
    if not restricted_grad_norm > config.kappa * grad_norm:
        return False
    if K_r == 0 or y_last is None or K_d > config.q_d:
        return True
    return bool(np.linalg.norm(y - y_last) > config.vartheta * np.linalg.norm(y_last))


def _coarse_solve(level: LeastSquaresTV, x0: np.ndarray, Hx0: np.ndarray, grad0: np.ndarray,
                  v: np.ndarray, lower: np.ndarray, config: MgConfig, momentum: bool,
                  step_scale: float):
    """Projected (accelerated) gradient on the smoothed coarse model.

    ``grad0`` is the model gradient at ``x0`` already computed by the caller.
    Returns the final iterate and the number of iterations taken.
    """
    if config.q_c == 0:
        return x0, 0
    lam, rho = level.lam, config.rho_tv
    alpha = step_scale / level.lipschitz

    def phi(x, Hx):
        r = Hx - level.data
        return 0.5 * float(np.vdot(r, r)) + lam * tv_smooth_value(x, rho) + float(np.vdot(v, x))

    x_prev, Hx_prev = x0, Hx0
    phi_prev = phi(x0, Hx0)
    y, Hy, g, t = x0, Hx0, grad0, 1.0
    it = 0
    while it < config.q_c:
        x = np.maximum(y - alpha * g, lower)
        Hx = level.op.apply(x)
        phi_x = phi(x, Hx)
        it += 1
        # phi can be negative through the linear term, hence the magnitudes
        denom = max(abs(phi_prev), abs(phi_x))
        done = denom == 0 or (phi_prev - phi_x) / denom < config.eps_c
        theta = 0.0
        if momentum:
            t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
            theta, t = (t - 1) / t_next, t_next
        y = x + theta * (x - x_prev)
        Hy = Hx + theta * (Hx - Hx_prev)
        x_prev, Hx_prev, phi_prev = x, Hx, phi_x
        if done or it >= config.q_c:
            break
        g = level.grad_data(Hy) + lam * tv_smooth_grad(y, rho) + v
    return x_prev, it


def make_recursion_hook(pair: LevelPair, config: MgConfig, momentum: bool, info: MgInfo,
                        step_scale: float = 1.0):
    """Hook for :func:`patmg.optim.proximal_gradient` that performs MG steps."""
    fine, coarse = pair.fine, pair.coarse
    state = {"K_d": 0, "K_r": 0, "y_last": None}

    def hook(k, y, grad_f):
        if k == 1:
            state["K_d"] += 1
            return None
        G = grad_f + fine.lam * tv_smooth_grad(y, config.rho_tv)
        RG = restrict(G)
        if not should_recurse(np.linalg.norm(RG), np.linalg.norm(G), y, state["y_last"],
                              state["K_r"], state["K_d"], config):
            state["K_d"] += 1
            return None
        state["K_d"] = 0
        state["K_r"] += 1
        state["y_last"] = y
        xc0 = restrict(y)
        Hxc0 = coarse.op.apply(xc0)
        gc0 = coarse.grad_data(Hxc0) + coarse.lam * tv_smooth_grad(xc0, config.rho_tv)
        v = coherence_term(RG, gc0)
        model_grad = gc0 + v
        info.coherence_residuals.append(
            float(np.linalg.norm(model_grad - RG) / max(np.linalg.norm(RG), np.finfo(float).tiny)))
        lower = restrict_constraints(y)
        xc, n_it = _coarse_solve(coarse, xc0, Hxc0, model_grad, v, lower, config, momentum,
                                  step_scale)
        x = y + prolong(xc - xc0)
        info.recursions.append(k)
        info.coarse_iters.append(n_it)
        info.min_iterate.append(float(x.min()))
        return x, fine.apply(x)

    return hook


def mg_solve(pair: LevelPair, objective: ObjectiveConfig, config: MgConfig,
             base: str = "fista", x0=None, error_fn=None, callbacks=()):
    """MG/ISTA or MG/FISTA; returns (x, records, info)."""
    if base not in ("ista", "fista"):
        raise ValueError(f"unknown base method {base!r}")
    momentum = base == "fista"
    info = MgInfo()
    scale = config.coarse_step_scale if config.coarse_step_scale is not None else objective.step_scale
    hook = make_recursion_hook(pair, config, momentum, info, scale)
    objective = replace(objective, eps_d=config.eps_d)
    x, records = proximal_gradient(pair.fine, objective, momentum, x0=x0, error_fn=error_fn,
                                   callbacks=callbacks, hook=hook)
    return x, records, info


__all__ = [
    "LevelPair", "MgConfig", "MgInfo", "coarse_operator", "coherence_term", "mg_solve",
    "prolong", "prolongation_matrix", "restrict", "restrict_constraints", "restrict_data",
    "restriction_matrix", "restriction_norm", "should_recurse",
]
