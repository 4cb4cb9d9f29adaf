"""Adjoint of the forward map: the time-reversed adjoint wave system.

The adjoint fields obey

    du*/dt   = -(1/rho0) grad p*
    drho*/dt = rho0 (-div u* + w h(T - t))
    p*       = rho0 {1 - d/dt L_a tau - L_d eta} (c0^2 / rho0) rho*

with zero initial conditions, and the adjoint image is rho*(T) / rho0.  The
fractional Laplacians ``L_a``, ``L_d`` act on the coefficient-weighted field
(the transposed ordering of the forward equation of state).  The measured
residual enters the continuity equation through the transpose of the sensor
interpolation, scaled by 1/dt so that the result is the adjoint with respect
to the plain Euclidean inner product on sensor samples.

Discretisation mirrors :class:`patmg.wave.KSpaceSolver`: the pressure-like
adjoint variable is split per axis (it carries the PML damping), the density
increment is not, and the last step is the half step that matches the
forward start from u(0) = 0.  With these conventions the discrete pair
satisfies <Hx, h> = <x, H*h> to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SensorData
from .wave import CHECK_EVERY, ForwardOperator, KSpaceSolver, smooth_source


@dataclass(frozen=True, eq=False)
class AdjointOperator:
    """Adjoint paired with a :class:`ForwardOperator` (shares its parameters)."""

    forward_op: ForwardOperator

    @property
    def grid(self):
        return self.forward_op.grid

    @property
    def medium(self):
        return self.forward_op.medium

    @property
    def sensors(self):
        return self.forward_op.sensors


def _residual_array(op: ForwardOperator, residual) -> np.ndarray:
    if isinstance(residual, SensorData):
        residual = residual.samples
    residual = np.asarray(residual, dtype=float)
    if residual.shape != op.data_shape:
        raise ValueError(f"residual shape {residual.shape} != sensors x nt {op.data_shape}")
    return residual


def adjoint_fields(solver: KSpaceSolver, residual: np.ndarray) -> np.ndarray:
    """Run the adjoint system on the full grid and return rho*(T)/rho0."""
    g = solver.grid
    dt = g.dt
    d = solver.d
    fft, ifft = solver.fft, solver.ifft
    rho0, c2 = solver.rho0, solver.c2
    u = [np.zeros(solver.shape) for _ in range(d)]
    p_split = [np.zeros(solver.shape) for _ in range(d)]
    for n in range(g.nt - 1, 0, -1):
        if n < g.nt - 1:
            # momentum: u* driven by the pressure-like field, PML per axis
            for ax in range(d):
                pm = solver.pml[ax]
                grad = ifft(solver.ddx_pos[ax] * fft(pm * p_split[ax]))
                u[ax] = u[ax] - solver.dt_over_rho_sg[ax] * grad
                p_split[ax] = pm * pm * p_split[ax]
        # continuity with the time-reversed residual as a mass source
        div_spec = sum(solver.ddx_neg[ax] * fft(solver.pml_sg[ax] * u[ax]) for ax in range(d))
        source = (solver.MT @ residual[:, n]).reshape(solver.shape)
        drho = rho0 * (source - dt * ifft(div_spec))
        for ax in range(d):
            pm = solver.pml_sg[ax]
            u[ax] = pm * pm * u[ax]
        # state equation
        dp = c2 * drho
        if solver.lossy:
            # absorption term: -rho0 d/dt L_a(tau c0^2 rho*/rho0), pushed into u*
            absorb = rho0 * ifft(solver.nabla_absorb * fft(solver.tau * c2 * drho / rho0))
            A = fft(absorb)
            for ax in range(d):
                u[ax] = u[ax] + ifft(solver.ddx_pos[ax] * A) / solver.rho0_sg[ax]
            dp = dp - rho0 * ifft(solver.nabla_disperse * fft(solver.eta * c2 * drho / rho0))
        for ax in range(d):
            p_split[ax] = p_split[ax] + dp
        if n % CHECK_EVERY == 0:
            solver._check(dp, n)
    # final half step back to t = 0 (the forward starts from u = 0)
    div_spec = 0
    for ax in range(d):
        grad = ifft(solver.ddx_pos[ax] * fft(p_split[ax]))
        u_half = u[ax] - solver.dt_over_rho_sg[ax] * grad
        div_spec = div_spec + solver.ddx_neg[ax] * fft(u_half)
    mean_p = sum(p_split) / d
    out = solver.density_from_pressure_adjoint(mean_p / rho0)
    out = out - 0.5 * dt * ifft(div_spec)
    out = out + (solver.MT @ residual[:, 0]).reshape(solver.shape)
    solver._check(out, 0)
    return out


def run_adjoint(op: ForwardOperator, residual) -> np.ndarray:
    residual = _residual_array(op, residual)
    full = adjoint_fields(op.solver, residual)
    image = full[op.grid.interior]
    if op.smoothing:
        image = smooth_source(image, op.workers)
    return image


def adjoint(op, residual) -> np.ndarray:
    """Apply H* to sensor-space data; ``op`` is a forward or adjoint operator."""
    if isinstance(op, AdjointOperator):
        op = op.forward_op
    return run_adjoint(op, residual)


def lossless_adjoint(op: ForwardOperator, residual) -> np.ndarray:
    """Adjoint of the lossless system with the residual as a mass source.

    Kept free of any absorption machinery; it is the reference the general
    adjoint must reproduce when tau = eta = 0.
    """
    residual = _residual_array(op, residual)
    s = op.solver
    g = op.grid
    dt, d = g.dt, s.d
    u = [np.zeros(s.shape) for _ in range(d)]
    p = [np.zeros(s.shape) for _ in range(d)]
    for n in range(g.nt - 1, 0, -1):
        if n < g.nt - 1:
            for ax in range(d):
                u[ax] = u[ax] - s.dt_over_rho_sg[ax] * s.ifft(s.ddx_pos[ax] * s.fft(s.pml[ax] * p[ax]))
                p[ax] = s.pml[ax] * s.pml[ax] * p[ax]
        div = s.ifft(sum(s.ddx_neg[ax] * s.fft(s.pml_sg[ax] * u[ax]) for ax in range(d)))
        drho = s.rho0 * ((s.MT @ residual[:, n]).reshape(s.shape) - dt * div)
        for ax in range(d):
            u[ax] = s.pml_sg[ax] * s.pml_sg[ax] * u[ax]
            p[ax] = p[ax] + s.c2 * drho
    div_spec = 0
    for ax in range(d):
        uh = u[ax] - s.dt_over_rho_sg[ax] * s.ifft(s.ddx_pos[ax] * s.fft(p[ax]))
        div_spec = div_spec + s.ddx_neg[ax] * s.fft(uh)
    full = (sum(p) / d) / s.rho0 / s.c2 - 0.5 * dt * s.ifft(div_spec)
    full = full + (s.MT @ residual[:, 0]).reshape(s.shape)
    image = full[g.interior]
    if op.smoothing:
        image = smooth_source(image, op.workers)
    return image
