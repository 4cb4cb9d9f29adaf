"""Grids, media, field containers and spectral helpers shared by every module.

All maps are stored as numpy arrays in row-major order with axis order
(x, y[, z]).  Grid-sized maps include the PML halo; images (initial pressure
estimates) cover only the interior, i.e. the grid minus ``pml_thickness``
points on every side.

Units are SI unless a field name says otherwise.  The one exception is the
absorption coefficient ``alpha0``, which is given in dB MHz^-y cm^-1 as is
customary in tissue tables and converted internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import sparse

# 20 log10(e): dB -> neper
DB_PER_NEPER = 20.0 * math.log10(math.e)


class DivergenceError(RuntimeError):
    """Raised when a field or an objective value stops being finite/bounded."""

    def __init__(self, message: str, time_index: int | None = None):
        super().__init__(message)
        self.time_index = time_index


def _as_tuple(values, n, cast=float):
    if np.isscalar(values):
        return tuple(cast(values) for _ in range(n))
    values = tuple(cast(v) for v in values)
    if len(values) != n:
        raise ValueError(f"expected {n} values, got {len(values)}")
    return values


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid with a PML halo and a time axis.

    ``dims`` counts grid points per axis *including* the PML on both sides.
    """

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    pml_thickness: int
    pml_alpha_max: float
    dt: float
    nt: int
    c_ref: float

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", _as_tuple(self.spacing, len(dims)))
        if len(dims) not in (2, 3):
            raise ValueError(f"grid must have 2 or 3 axes, got {len(dims)}")
        if min(dims) < 8:
            raise ValueError(f"every axis needs at least 8 points, got {dims}")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.nt) < 1:
            raise ValueError("nt must be at least 1")
        if not 0 <= self.pml_thickness < min(dims) / 2:
            raise ValueError("pml_thickness must be < min(dims)/2")
        if self.pml_alpha_max < 0:
            raise ValueError("pml_alpha_max must be non-negative")
        if not self.c_ref > 0:
            raise ValueError("c_ref must be positive")
        object.__setattr__(self, "nt", int(self.nt))
        object.__setattr__(self, "pml_thickness", int(self.pml_thickness))

    @classmethod
    def from_cfl(cls, dims, spacing, c_max, nt, cfl=0.3, pml_thickness=20,
                 pml_alpha_max=2.0):
        """Build a grid whose time step follows ``dt = cfl * min(spacing) / c_max``."""
        spacing = _as_tuple(spacing, len(dims))
        dt = cfl * min(spacing) / c_max
        return cls(tuple(dims), spacing, pml_thickness, pml_alpha_max, dt, nt, c_max)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def interior_shape(self) -> tuple[int, ...]:
        return tuple(n - 2 * self.pml_thickness for n in self.dims)

    @property
    def interior(self) -> tuple[slice, ...]:
        m = self.pml_thickness
        return tuple(slice(m, n - m) for n in self.dims)

    @property
    def extent(self) -> tuple[float, ...]:
        """Physical size of the interior (each node owns one cell)."""
        return tuple(n * h for n, h in zip(self.interior_shape, self.spacing))

    def axis_coordinates(self, axis: int) -> np.ndarray:
        """Node coordinates along ``axis``, centred on zero."""
        n = self.dims[axis]
        return (np.arange(n) - (n - 1) / 2) * self.spacing[axis]

    def interior_coordinates(self, axis: int) -> np.ndarray:
        return self.axis_coordinates(axis)[self.interior[axis]]

    def max_frequency(self, c_min: float) -> float:
        """Highest frequency (Hz) supported on the coarsest axis."""
        return c_min / (2 * max(self.spacing))

    def coarsen(self) -> "Grid":
        """Half the points per axis, double spacing and dt, half nt and PML."""
        if any(n % 2 for n in self.dims) or self.nt % 2 or self.pml_thickness % 2:
            raise ValueError("coarsening needs even dims, nt and pml_thickness")
        return Grid(
            tuple(n // 2 for n in self.dims),
            tuple(2 * h for h in self.spacing),
            self.pml_thickness // 2,
            self.pml_alpha_max,
            2 * self.dt,
            self.nt // 2,
            self.c_ref,
        )

    def embed(self, image: np.ndarray) -> np.ndarray:
        """Place an interior image into a zero-padded grid-sized map."""
        if image.shape != self.interior_shape:
            raise ValueError(f"image shape {image.shape} != interior {self.interior_shape}")
        full = np.zeros(self.dims)
        full[self.interior] = image
        return full

    def describe(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "pml_thickness": self.pml_thickness,
            "pml_alpha_max": self.pml_alpha_max,
            "dt": self.dt,
            "nt": self.nt,
            "c_ref": self.c_ref,
        }


def alpha_db_to_neper(alpha0, y):
    """dB MHz^-y cm^-1  ->  Np (rad/s)^-y m^-1."""
    return 100.0 * np.asarray(alpha0, dtype=float) * (1e-6 / (2 * math.pi)) ** y / DB_PER_NEPER


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Medium:
    """Acoustic property maps on the full grid (PML halo included).

    ``tau`` and ``eta`` are the absorption and dispersion proportionality maps
    of the fractional-Laplacian power-law model; build media through
    :func:`derive_loss_coefficients` so they stay consistent with ``alpha0``.
    """

    c0: np.ndarray
    rho0: np.ndarray
    alpha0: np.ndarray
    y: float
    tau: np.ndarray
    eta: np.ndarray

    @property
    def shape(self):
        return self.c0.shape

    @property
    def lossless(self) -> bool:
        return not (np.any(self.tau) or np.any(self.eta))

    @classmethod
    def homogeneous(cls, grid: Grid, c0=1500.0, rho0=1000.0, alpha0=0.0, y=1.5):
        ones = np.ones(grid.dims)
        return derive_loss_coefficients(c0 * ones, rho0 * ones, alpha0 * ones, y)

    def with_maps(self, **maps) -> "Medium":
        """Copy with some of c0/rho0/alpha0/y replaced; tau and eta are re-derived."""
        c0 = maps.pop("c0", self.c0)
        rho0 = maps.pop("rho0", self.rho0)
        alpha0 = maps.pop("alpha0", self.alpha0)
        y = maps.pop("y", self.y)
        if maps:
            raise TypeError(f"unknown maps {sorted(maps)}")
        return derive_loss_coefficients(c0, rho0, alpha0, y)

    def fingerprint(self) -> bytes:
        parts = [np.ascontiguousarray(a).tobytes() for a in (self.c0, self.rho0, self.alpha0)]
        return b"".join(parts) + repr(self.y).encode()


def derive_loss_coefficients(c0, rho0, alpha0, y) -> Medium:
    """Build a :class:`Medium`, deriving the absorption/dispersion maps.

    tau = -2 a c0^(y-1) and eta = 2 a c0^y tan(pi y / 2), where ``a`` is
    ``alpha0`` converted to Np (rad/s)^-y m^-1.
    """
    y = float(y)
    if not 1.0 < y < 3.0:
        raise ValueError(f"power-law exponent must lie in (1, 3), got {y}")
    c0 = np.asarray(c0, dtype=float)
    rho0 = np.broadcast_to(np.asarray(rho0, dtype=float), c0.shape)
    alpha0 = np.broadcast_to(np.asarray(alpha0, dtype=float), c0.shape)
    if np.any(~(c0 > 0)):
        raise ValueError("sound speed must be positive everywhere")
    if np.any(~(rho0 > 0)):
        raise ValueError("density must be positive everywhere")
    if np.any(~(alpha0 >= 0)):
        raise ValueError("absorption coefficient must be non-negative")
    a = alpha_db_to_neper(alpha0, y)
    tau = -2.0 * a * c0 ** (y - 1.0)
    # tan(pi) is not exactly zero in floating point
    tangent = 0.0 if y == 2.0 else math.tan(math.pi * y / 2.0)
    eta = 2.0 * a * c0 ** y * tangent
    return Medium(_readonly(c0), _readonly(rho0), _readonly(alpha0), y,
                  _readonly(tau), _readonly(eta))


@dataclass
class AcousticState:
    """Pressure, per-axis particle velocity and per-axis acoustic density.

    Velocities live on the staggered grid and half a time step behind the
    scalar fields once stepping has started; ``t_index`` counts steps taken.
    """

    p: np.ndarray
    u: tuple[np.ndarray, ...]
    rho: tuple[np.ndarray, ...]
    t_index: int = 0

    @classmethod
    def zeros(cls, dims):
        d = len(dims)
        return cls(np.zeros(dims), tuple(np.zeros(dims) for _ in range(d)),
                   tuple(np.zeros(dims) for _ in range(d)))


@dataclass(frozen=True, eq=False)
class SensorArray:
    """Point detectors at arbitrary positions, read by multilinear interpolation."""

    positions: np.ndarray
    interp: str = "linear"

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "positions", _readonly(pos))
        if self.interp != "linear":
            raise ValueError(f"unsupported interpolation {self.interp!r}")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def interpolation_matrix(self, grid: Grid) -> sparse.csr_matrix:
        """Sparse (num_sensors x prod(dims)) matrix of interpolation weights."""
        if self.positions.shape[1] != grid.ndim:
            raise ValueError("sensor dimension does not match grid")
        m = grid.pml_thickness
        idx_lo, frac = [], []
        for ax in range(grid.ndim):
            n, h = grid.dims[ax], grid.spacing[ax]
            s = self.positions[:, ax] / h + (n - 1) / 2
            if np.any(s < m) or np.any(s > n - 1 - m):
                raise ValueError("sensor positions must lie inside the non-PML interior")
            lo = np.minimum(np.floor(s).astype(int), n - 2)
            idx_lo.append(lo)
            frac.append(s - lo)
        rows, cols, vals = [], [], []
        for corner in np.ndindex(*(2,) * grid.ndim):
            w = np.ones(self.count)
            ind = []
            for ax, c in enumerate(corner):
                w = w * (frac[ax] if c else 1 - frac[ax])
                ind.append(idx_lo[ax] + c)
            rows.append(np.arange(self.count))
            cols.append(np.ravel_multi_index(ind, grid.dims))
            vals.append(w)
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.count, int(np.prod(grid.dims))),
        )
        return mat.tocsr()

    @classmethod
    def arc(cls, radius, count, start=np.pi / 2, stop=3 * np.pi / 2, center=(0.0, 0.0)):
        """Equidistant detectors on a circular arc (default: the left half circle)."""
        theta = np.linspace(start, stop, count)
        pts = np.stack([center[0] + radius * np.cos(theta),
                        center[1] + radius * np.sin(theta)], axis=1)
        return cls(pts)


@dataclass
class SensorData:
    """Pressure time series, one row per sensor."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise ValueError("samples must be (num_sensors, nt)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("sensor data contains non-finite values")

    @property
    def nt(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class Wavenumbers:
    """Angular wavenumber tables in FFT ordering."""

    k: tuple[np.ndarray, ...]  # broadcastable per-axis vectors
    kmag: np.ndarray
    kpow_absorb: np.ndarray | None = field(default=None)  # |k|^(y-2)
    kpow_disperse: np.ndarray | None = field(default=None)  # |k|^(y-1)


def _safe_power(kmag, exponent):
    out = np.zeros_like(kmag)
    nz = kmag > 0
    out[nz] = kmag[nz] ** exponent
    return out


def make_wavenumbers(dims: Sequence[int], spacing, y: float | None = None,
                     real: bool = False) -> Wavenumbers:
    """Per-axis wavenumbers 2*pi*fftfreq and |k|-power tables.

    With ``real=True`` the last axis uses the rfft half spectrum.  Negative
    powers of |k| are set to 0 at k = 0.
    """
    dims = tuple(int(n) for n in dims)
    spacing = _as_tuple(spacing, len(dims))
    d = len(dims)
    ks = []
    for ax, (n, h) in enumerate(zip(dims, spacing)):
        if real and ax == d - 1:
            k = 2 * np.pi * np.fft.rfftfreq(n, d=h)
        else:
            k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        shape = [1] * d
        shape[ax] = k.size
        ks.append(k.reshape(shape))
    kmag = np.sqrt(sum(k ** 2 for k in ks))
    if y is None:
        return Wavenumbers(tuple(ks), kmag)
    return Wavenumbers(tuple(ks), kmag, _safe_power(kmag, y - 2.0), _safe_power(kmag, y - 1.0))


def spectral_derivative(f: np.ndarray, spacing, axis: int) -> np.ndarray:
    """Collocated Fourier derivative of a periodic field."""
    wn = make_wavenumbers(f.shape, spacing)
    k = wn.k[axis]
    n = f.shape[axis]
    if n % 2 == 0:
        # the Nyquist mode has no well-defined derivative on a collocated grid
        k = k.copy()
        idx = [0] * f.ndim
        idx[axis] = n // 2
        k[tuple(idx)] = 0.0
    return np.real(np.fft.ifftn(1j * k * np.fft.fftn(f)))


def fractional_laplacian(f: np.ndarray, spacing, s: float) -> np.ndarray:
    """(-Laplacian)^s applied spectrally, i.e. multiplication by |k|^(2s)."""
    wn = make_wavenumbers(f.shape, spacing)
    return np.real(np.fft.ifftn(_safe_power(wn.kmag, 2.0 * s) * np.fft.fftn(f)))


def with_nt(grid: Grid, nt: int) -> Grid:
    return replace(grid, nt=nt)
