"""k-space pseudospectral solver for the lossy first-order acoustic system.

Time stepping follows the usual staggered leapfrog: velocities on half-cell
shifted grids and half time steps, densities and pressure on the nodes.
Spatial derivatives are taken in the Fourier domain with the k-space
correction ``sinc(c_ref |k| dt / 2)``; the PML is a split-field exponential
damping applied per axis.  Power-law absorption and dispersion enter the
equation of state through two fractional Laplacians.

The adjoint in :mod:`patmg.adjoint` is written against the exact same
stepping conventions, so the pair passes dot-tests to rounding precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .core import (AcousticState, DivergenceError, Grid, Medium, SensorArray,
                   SensorData, make_wavenumbers)

CHECK_EVERY = 64


def pml_profile(n: int, thickness: int, alpha_max: float, c_ref: float, h: float,
                dt: float, staggered: bool) -> np.ndarray:
    """Per-half-step damping factors exp(-a dt / 2) along one axis.

    The absorption ``a`` ramps with the fourth power of depth into the layer,
    reaching ``alpha_max`` nepers per grid point at the outer edge.
    """
    if thickness == 0 or alpha_max == 0:
        return np.ones(n)
    j = np.arange(n) + (0.5 if staggered else 0.0)
    left = (thickness - j) / thickness
    right = (j - (n - 1 - thickness)) / thickness
    depth = np.clip(np.maximum(left, right), 0.0, None)
    a = alpha_max * (c_ref / h) * depth ** 4
    return np.exp(-a * dt / 2)


def blackman_multiplier(shape, real_last: bool = False) -> np.ndarray:
    """Separable Blackman window over normalised frequency, 1 at DC, 0 at Nyquist."""
    d = len(shape)
    out = np.ones(1)
    for ax, n in enumerate(shape):
        if real_last and ax == d - 1:
            f = np.fft.rfftfreq(n)
        else:
            f = np.fft.fftfreq(n)
        r = np.abs(f) / 0.5
        w = 0.42 + 0.5 * np.cos(np.pi * r) + 0.08 * np.cos(2 * np.pi * r)
        w = np.clip(w, 0.0, None)
        s = [1] * d
        s[ax] = n if not (real_last and ax == d - 1) else f.size
        out = out * w.reshape(s)
    return out


def smooth_source(image: np.ndarray, workers: int = 1) -> np.ndarray:
    """Low-pass an image with a real, even Blackman spectral window.

    The multiplier is real so the operator is self-adjoint; it is 1 at DC so
    constants pass unchanged.
    """
    image = np.asarray(image, dtype=float)
    win = blackman_multiplier(image.shape, real_last=True)
    spec = sfft.rfftn(image, workers=workers)
    return sfft.irfftn(spec * win, s=image.shape, workers=workers)


class KSpaceSolver:
    """Precomputed operators for one (grid, medium, sensors) combination."""

    def __init__(self, grid: Grid, medium: Medium, sensors: SensorArray | None = None,
                 force_lossy: bool = False, workers: int = 1):
        if medium.shape != grid.dims:
            raise ValueError(f"medium shape {medium.shape} != grid dims {grid.dims}")
        self.grid = grid
        self.medium = medium
        self.workers = workers
        self.shape = grid.dims
        self.d = grid.ndim
        dt = grid.dt
        wn = make_wavenumbers(grid.dims, grid.spacing, y=medium.y, real=True)
        kappa = np.sinc(grid.c_ref * wn.kmag * dt / (2 * np.pi))
        self.ddx_pos, self.ddx_neg = [], []
        for ax, (k, h) in enumerate(zip(wn.k, grid.spacing)):
            shift = np.exp(1j * k * h / 2)
            self.ddx_pos.append(1j * k * shift * kappa)
            self.ddx_neg.append(1j * k * np.conj(shift) * kappa)
        self.pml, self.pml_sg = [], []
        for ax in range(self.d):
            shape = [1] * self.d
            shape[ax] = grid.dims[ax]
            args = (grid.dims[ax], grid.pml_thickness, grid.pml_alpha_max, grid.c_ref,
                    grid.spacing[ax], dt)
            self.pml.append(pml_profile(*args, staggered=False).reshape(shape))
            self.pml_sg.append(pml_profile(*args, staggered=True).reshape(shape))
        self.rho0 = np.asarray(medium.rho0)
        self.c2 = np.asarray(medium.c0) ** 2
        self.rho0_sg = [0.5 * (self.rho0 + np.roll(self.rho0, -1, axis=ax)) for ax in range(self.d)]
        self.dt_over_rho_sg = [dt / r for r in self.rho0_sg]
        self.lossy = force_lossy or not medium.lossless
        if self.lossy:
            self.tau = np.asarray(medium.tau)
            self.eta = np.asarray(medium.eta)
            self.nabla_absorb = wn.kpow_absorb
            self.nabla_disperse = wn.kpow_disperse
        self.sensors = sensors
        if sensors is not None:
            self.M = sensors.interpolation_matrix(grid)
            self.MT = self.M.T.tocsr()

    # spectral plumbing -------------------------------------------------
    def fft(self, a):
        return sfft.rfftn(a, workers=self.workers)

    def ifft(self, a):
        return sfft.irfftn(a, s=self.shape, workers=self.workers)

    def _state_pressure(self, rho_sum, div):
        """Lossy equation of state, coefficients outside the fractional Laplacians."""
        if not self.lossy:
            return self.c2 * rho_sum
        absorb = self.tau * self.ifft(self.nabla_absorb * self.fft(self.rho0 * div))
        disperse = self.eta * self.ifft(self.nabla_disperse * self.fft(rho_sum))
        return self.c2 * (rho_sum + absorb - disperse)

    def _fixed_point(self, rhs, apply, what):
        # solve w - apply(w) = rhs; apply is a small perturbation for physical media
        w = rhs.copy()
        scale = np.max(np.abs(rhs)) or 1.0
        for _ in range(100):
            w_new = rhs + apply(w)
            change = np.max(np.abs(w_new - w))
            w = w_new
            if change <= 1e-15 * scale:
                return w
        raise DivergenceError(f"{what}: dispersion operator is too strong to invert")

    def density_from_pressure(self, p):
        """Solve c0^2 (1 - eta L) rho = p for rho (identity scaling when lossless)."""
        if not self.lossy or not np.any(self.eta):
            return p / self.c2
        base = p / self.c2
        return self._fixed_point(
            base, lambda r: self.eta * self.ifft(self.nabla_disperse * self.fft(r)),
            "initial density")

    def density_from_pressure_adjoint(self, b):
        """Transpose of :meth:`density_from_pressure`."""
        if not self.lossy or not np.any(self.eta):
            return b / self.c2
        w = self._fixed_point(
            b, lambda v: self.ifft(self.nabla_disperse * self.fft(self.eta * v)),
            "adjoint final density")
        return w / self.c2

    def _check(self, field, n):
        if not np.all(np.isfinite(field)):
            raise DivergenceError(f"non-finite field at time index {n}", n)

    # stepping ----------------------------------------------------------
    def initial_state(self, p0: np.ndarray) -> AcousticState:
        p0 = np.asarray(p0, dtype=float)
        rho = self.density_from_pressure(p0) / self.d
        return AcousticState(p0.copy(), tuple(np.zeros(self.shape) for _ in range(self.d)),
                             tuple(rho.copy() for _ in range(self.d)), 0)

    def step(self, state: AcousticState) -> AcousticState:
        """Advance by one dt.  From ``t_index == 0`` the first velocity update is
        a PML-free half step, since u = 0 at t = 0."""
        first = state.t_index == 0
        P = self.fft(state.p)
        u, rho, du = [], [], []
        for ax in range(self.d):
            grad = self.ifft(self.ddx_pos[ax] * P)
            if first:
                ua = -0.5 * self.dt_over_rho_sg[ax] * grad
            else:
                pm = self.pml_sg[ax]
                ua = pm * (pm * state.u[ax] - self.dt_over_rho_sg[ax] * grad)
            dua = self.ifft(self.ddx_neg[ax] * self.fft(ua))
            if first:
                ra = state.rho[ax] - self.grid.dt * self.rho0 * dua
            else:
                pm = self.pml[ax]
                ra = pm * (pm * state.rho[ax] - self.grid.dt * self.rho0 * dua)
            u.append(ua)
            rho.append(ra)
            du.append(dua)
        p = self._state_pressure(sum(rho), sum(du))
        self._check(p, state.t_index + 1)
        return AcousticState(p, tuple(u), tuple(rho), state.t_index + 1)

    def run(self, p0: np.ndarray, record=None) -> np.ndarray | None:
        """Propagate from initial pressure ``p0`` for ``nt`` samples.

        ``record`` is called with (time index, pressure) after every step; the
        return value is the (num_sensors, nt) sensor trace when sensors exist.
        """
        g = self.grid
        dt = g.dt
        out = None
        if self.sensors is not None:
            out = np.empty((self.sensors.count, g.nt))
        p = np.asarray(p0, dtype=float)
        rho = [self.density_from_pressure(p) / self.d for _ in range(self.d)]
        u = [np.zeros(self.shape) for _ in range(self.d)]
        if out is not None:
            out[:, 0] = self.M @ p.ravel()
        if record is not None:
            record(0, p)
        for n in range(1, g.nt):
            P = self.fft(p)
            du = []
            for ax in range(self.d):
                grad = self.ifft(self.ddx_pos[ax] * P)
                if n == 1:
                    u[ax] = -0.5 * self.dt_over_rho_sg[ax] * grad
                else:
                    pm = self.pml_sg[ax]
                    u[ax] = pm * (pm * u[ax] - self.dt_over_rho_sg[ax] * grad)
                dua = self.ifft(self.ddx_neg[ax] * self.fft(u[ax]))
                if n == 1:
                    rho[ax] = rho[ax] - dt * self.rho0 * dua
                else:
                    pm = self.pml[ax]
                    rho[ax] = pm * (pm * rho[ax] - dt * self.rho0 * dua)
                du.append(dua)
            p = self._state_pressure(sum(rho), sum(du))
            if n % CHECK_EVERY == 0 or n == g.nt - 1:
                self._check(p, n)
            if out is not None:
                out[:, n] = self.M @ p.ravel()
            if record is not None:
                record(n, p)
        return out


def step(state: AcousticState, grid: Grid, medium: Medium) -> AcousticState:
    """Advance ``state`` by one time step (builds a solver; use
    :class:`KSpaceSolver` directly inside loops)."""
    for part in (state.p, *state.u, *state.rho):
        if part.shape != grid.dims:
            raise ValueError("state dims do not match grid")
    return KSpaceSolver(grid, medium).step(state)


@dataclass(eq=False)
class ForwardOperator:
    """Discrete forward map H: interior initial pressure -> sensor time series."""

    grid: Grid
    medium: Medium
    sensors: SensorArray
    smoothing: bool = True
    workers: int = 1
    force_lossy: bool = False  # run the absorption branch even when tau = eta = 0

    @cached_property
    def solver(self) -> KSpaceSolver:
        return KSpaceSolver(self.grid, self.medium, self.sensors, force_lossy=self.force_lossy,
                            workers=self.workers)

    @property
    def image_shape(self):
        return self.grid.interior_shape

    @property
    def data_shape(self):
        return (self.sensors.count, self.grid.nt)

    def apply(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=float)
        if image.shape != self.image_shape:
            raise ValueError(f"image shape {image.shape} != {self.image_shape}")
        if not np.all(np.isfinite(image)):
            raise ValueError("image contains non-finite values")
        if self.smoothing:
            image = smooth_source(image, self.workers)
        return self.solver.run(self.grid.embed(image))

    def apply_adjoint(self, data: np.ndarray) -> np.ndarray:
        from .adjoint import run_adjoint
        return run_adjoint(self, data)

    def fingerprint(self) -> bytes:
        import json
        desc = json.dumps({"grid": self.grid.describe(), "smoothing": self.smoothing},
                          sort_keys=True).encode()
        return desc + self.medium.fingerprint() + self.sensors.positions.tobytes()


def forward(op: ForwardOperator, image: np.ndarray) -> SensorData:
    """Simulate sensor data for an initial pressure image."""
    return SensorData(op.apply(image), op.grid.dt)
