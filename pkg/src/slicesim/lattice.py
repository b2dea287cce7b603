"""Grids, sampled complex fields, packet constructors and local observables.

Natural units with hbar = 1.  Fields are sampled on a uniform 1D grid and all
integrals are plain Riemann sums scaled by ``dx``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import GridMismatchError, PacketTooWideError, PulseOverlapError

BOUNDARIES = ("periodic", "absorbing")
SHAPES = ("gaussian", "pulse_train", "transverse_phase")


@dataclass(frozen=True)
class Grid:
    n_points: int
    dx: float
    dt: float
    x_min: float = 0.0
    boundary: str = "absorbing"

    def __post_init__(self):
        if self.n_points < 16:
            raise ValueError(f"n_points must be >= 16, got {self.n_points}")
        if not self.dx > 0 or not self.dt > 0:
            raise ValueError("dx and dt must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")

    @property
    def length(self) -> float:
        return self.n_points * self.dx

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def x_max(self) -> float:
        return self.x_min + self.dx * (self.n_points - 1)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n_points, self.dx)

    def require_width(self, width: float, what: str = "packet"):
        if 10 * width >= self.length:
            raise PacketTooWideError(
                f"{what} width {width:g} too wide for grid of length {self.length:g} "
                "(need 10*width < L)")


@dataclass
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n_points,):
            raise GridMismatchError(
                f"values shape {self.values.shape} does not match grid of {self.grid.n_points}")

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy())

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.conj())

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        return field_norm(self)

    def __add__(self, other: "ComplexField") -> "ComplexField":
        _same_grid(self, other)
        return ComplexField(self.grid, self.values + other.values)

    def __mul__(self, scalar) -> "ComplexField":
        return ComplexField(self.grid, self.values * scalar)

    __rmul__ = __mul__


@dataclass
class PacketSpec:
    """Parameters for the packet constructors.

    For ``pulse_train`` the ``width`` is the full support of one pulse, pulse
    ``i`` is centred at ``x0 - i*(gap + 2)*width`` (the train trails behind its
    head at ``x0``) and ``weights``/``phases`` give per-pulse norms and phases.
    For ``transverse_phase`` the ``width`` is the full support of a flat-topped
    envelope centred at ``x0`` and the amplitude oscillates as
    ``cos(2*pi*(x - x0)/lambda_par + phase_offset)``.
    """

    shape: str = "gaussian"
    x0: float = 0.0
    width: float = 1.0
    k0: float = 0.0
    gap: float = 8.0
    count: int = 1
    weights: Optional[Sequence[float]] = None
    phases: Optional[Sequence[float]] = None
    lambda_par: Optional[float] = None
    phase_offset: float = 0.0
    taper: Optional[float] = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")


def _same_grid(f: ComplexField, g: ComplexField):
    if f.grid != g.grid:
        raise GridMismatchError("fields live on different grids")


def raised_cosine(x: np.ndarray, center: float, width: float) -> np.ndarray:
    """Smooth compact bump of full support ``width`` and peak 1."""
    u = (x - center) / width
    out = 0.5 * (1 + np.cos(2 * np.pi * u))
    out[np.abs(u) >= 0.5] = 0.0
    return out


def tukey_window(x: np.ndarray, center: float, width: float, taper: float = 0.0) -> np.ndarray:
    """Flat-topped window of full support ``width`` with cosine edges of length ``taper``.

    ``taper == 0`` gives a half-open box ``[center - width/2, center + width/2)``
    so that abutting boxes tile the line without sharing a grid point.
    """
    lo, hi = center - width / 2, center + width / 2
    if taper <= 0:
        return ((x >= lo) & (x < hi)).astype(float)
    if 2 * taper > width:
        raise ValueError("taper longer than half the window")
    dist = np.minimum(x - lo, hi - x)
    w = np.where(dist >= taper, 1.0, 0.5 * (1 - np.cos(np.pi * np.clip(dist, 0, taper) / taper)))
    w[dist <= 0] = 0.0
    return w


def field_norm(f: ComplexField) -> float:
    return float(np.sum(np.abs(f.values) ** 2) * f.grid.dx)


def inner_product(f: ComplexField, g: ComplexField) -> complex:
    """<f|g>, conjugate-linear in the first argument."""
    _same_grid(f, g)
    return complex(np.vdot(f.values, g.values) * f.grid.dx)


def expectation_position(f: ComplexField) -> float:
    rho = f.density
    return float(np.sum(f.grid.x * rho) / np.sum(rho))


def position_variance(f: ComplexField) -> float:
    rho = f.density
    mean = np.sum(f.grid.x * rho) / np.sum(rho)
    return float(np.sum((f.grid.x - mean) ** 2 * rho) / np.sum(rho))


def expectation_momentum(f: ComplexField) -> float:
    """Spectral <-i d/dx>."""
    spec = np.abs(np.fft.fft(f.values)) ** 2
    return float(np.sum(f.grid.k * spec) / np.sum(spec))


def spectral_derivative(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.ifft(1j * grid.k * np.fft.fft(values))


def window_norm(f: ComplexField, window: np.ndarray) -> float:
    """Norm carried on the support of ``window``."""
    return float(np.sum(np.abs(f.values[window > 0]) ** 2) * f.grid.dx)


def _normalized(grid: Grid, values: np.ndarray) -> ComplexField:
    n = np.sum(np.abs(values) ** 2) * grid.dx
    if n == 0:
        raise ValueError("cannot normalize a zero field")
    return ComplexField(grid, values / np.sqrt(n))


def make_gaussian(grid: Grid, x0: float, sigma: float, k0: float = 0.0) -> ComplexField:
    """Unit-norm Gaussian with position spread ``sigma`` (std of |psi|^2)."""
    grid.require_width(sigma, "gaussian")
    if not (grid.x_min + 4 * sigma <= x0 <= grid.x_max - 4 * sigma):
        raise PacketTooWideError(f"x0={x0:g} is not in the grid interior for sigma={sigma:g}")
    x = grid.x
    psi = np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * k0 * x)
    return _normalized(grid, psi)


def pulse_centers(spec: PacketSpec) -> np.ndarray:
    return spec.x0 - (spec.gap + 2) * spec.width * np.arange(spec.count)


def make_pulse_train(grid: Grid, spec: PacketSpec) -> ComplexField:
    """Train of disjoint raised-cosine pulses sharing the carrier ``k0``.

    Each pulse is normalized on its own support so the per-pulse norms equal
    ``weights`` (equal split by default) to rounding.
    """
    if spec.count < 1:
        raise ValueError("count must be >= 1")
    if spec.count > 1 and spec.gap < 2:
        raise PulseOverlapError(f"gap multiplier {spec.gap:g} < 2")
    grid.require_width(spec.width, "pulse")
    weights = np.full(spec.count, 1.0 / spec.count) if spec.weights is None else np.asarray(spec.weights, float)
    phases = np.zeros(spec.count) if spec.phases is None else np.asarray(spec.phases, float)
    if weights.shape != (spec.count,) or phases.shape != (spec.count,):
        raise ValueError("weights and phases must have one entry per pulse")
    if np.any(weights < 0):
        raise ValueError("pulse weights must be non-negative")
    weights = weights / weights.sum()
    x = grid.x
    psi = np.zeros(grid.n_points, complex)
    for c, wgt, ph in zip(pulse_centers(spec), weights, phases):
        if c - spec.width / 2 < grid.x_min or c + spec.width / 2 > grid.x_max:
            raise PacketTooWideError(f"pulse at {c:g} does not fit in the grid")
        bump = raised_cosine(x, c, spec.width)
        if wgt == 0:
            continue
        bump = bump / np.sqrt(np.sum(bump**2) * grid.dx)
        psi += np.sqrt(wgt) * np.exp(1j * ph) * bump
    return ComplexField(grid, psi * np.exp(1j * spec.k0 * x))


def make_transverse(grid: Grid, spec: PacketSpec) -> ComplexField:
    """Flat-topped envelope with a slow real oscillation along the screen."""
    if spec.lambda_par is None or spec.lambda_par <= 0:
        raise ValueError("transverse_phase packets need lambda_par > 0")
    grid.require_width(spec.width, "transverse envelope")
    taper = spec.width / 10 if spec.taper is None else spec.taper
    x = grid.x
    env = tukey_window(x, spec.x0, spec.width, taper)
    psi = env * np.cos(2 * np.pi * (x - spec.x0) / spec.lambda_par + spec.phase_offset)
    return _normalized(grid, psi * np.exp(1j * spec.k0 * x))


def make_packet(grid: Grid, spec: PacketSpec) -> ComplexField:
    if spec.shape == "gaussian":
        return make_gaussian(grid, spec.x0, spec.width, spec.k0)
    if spec.shape == "pulse_train":
        return make_pulse_train(grid, spec)
    return make_transverse(grid, spec)


def probability_current(f: ComplexField, mass: float = 1.0) -> np.ndarray:
    dpsi = spectral_derivative(f.values, f.grid)
    return np.imag(np.conj(f.values) * dpsi) / mass


def local_velocity(f: ComplexField, mass: float = 1.0, rho_floor: float = 1e-12) -> np.ma.MaskedArray:
    """v = j/rho, masked where the density falls below ``rho_floor``."""
    rho = f.density
    low = rho <= rho_floor
    j = probability_current(f, mass)
    v = np.divide(j, rho, out=np.zeros_like(j), where=~low)
    return np.ma.masked_array(v, mask=low)
