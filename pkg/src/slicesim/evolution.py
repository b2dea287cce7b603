"""Unitary stepping of the massive field, photon-shell transport and the
radiative emission envelope."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InstabilityError
from .lattice import ComplexField, Grid

SCHEMES = ("crank-nicolson", "split-step")
GEOMETRIES = ("radial-3d", "line-1d")

# Largest phase a resolved mode may advance per step; beyond it Crank-Nicolson
# compresses the dispersion (arctan) and split-step aliases the phase.
PHASE_BOUND = {"crank-nicolson": np.pi / 2, "split-step": np.pi}
STRAY_FRACTION = 1e-4
NORM_DRIFT_LIMIT = 1e-6


@dataclass
class PropagatorConfig:
    scheme: str = "crank-nicolson"
    mass: float = 1.0
    potential: Optional[np.ndarray] = None
    dt: Optional[float] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.mass <= 0:
            raise ValueError("mass must be positive")


class Propagator:
    """Pre-factored one-step evolution operator for a fixed grid and config.

    The finite-difference Hamiltonian is ``-(1/2m) D2 + V`` with the three-point
    Laplacian (cyclic for periodic grids, zero Dirichlet data otherwise).
    """

    def __init__(self, grid: Grid, cfg: Optional[PropagatorConfig] = None, check_norm: bool = True):
        self.grid = grid
        self.cfg = cfg = cfg or PropagatorConfig()
        self.dt = grid.dt if cfg.dt is None else cfg.dt
        self.mass = cfg.mass
        self.check_norm = check_norm
        n = grid.n_points
        self.potential = np.zeros(n) if cfg.potential is None else np.asarray(cfg.potential, float)
        if self.potential.shape != (n,):
            raise ValueError("potential must be sampled on the grid")

        if cfg.scheme == "crank-nicolson":
            self.H = self._fd_hamiltonian()
            eye = sp.identity(n, dtype=complex, format="csc")
            a = (eye + 0.5j * self.dt * self.H).tocsc()
            self._b = (eye - 0.5j * self.dt * self.H).tocsr()
            self._lu = splu(a)
        else:
            k = grid.k
            self._kinetic_k = k**2 / (2 * self.mass)
            self._kin_phase = np.exp(-1j * self._kinetic_k * self.dt)
            self._half_v = np.exp(-0.5j * self.potential * self.dt)

    def _fd_hamiltonian(self):
        g, n = self.grid, self.grid.n_points
        off = np.full(n - 1, -1.0)
        lap = sp.diags([off, np.full(n, 2.0), off], [-1, 0, 1], format="lil")
        if g.boundary == "periodic":
            lap[0, n - 1] = -1.0
            lap[n - 1, 0] = -1.0
        kin = lap.tocsr() / (2 * self.mass * g.dx**2)
        return (kin + sp.diags(self.potential)).astype(complex).tocsr()

    def hamiltonian(self, values: np.ndarray) -> np.ndarray:
        if self.cfg.scheme == "crank-nicolson":
            return self.H @ values
        kin = np.fft.ifft(self._kinetic_k * np.fft.fft(values))
        return kin + self.potential * values

    def energy_density(self, values: np.ndarray) -> np.ndarray:
        """Per-point contribution Re(conj(psi) H psi) dx; sums to <H>."""
        return np.real(np.conj(values) * self.hamiltonian(values)) * self.grid.dx

    def energy(self, values: np.ndarray) -> float:
        return float(np.sum(self.energy_density(values)))

    def _raw_step(self, values: np.ndarray) -> np.ndarray:
        if self.cfg.scheme == "crank-nicolson":
            return self._lu.solve(self._b @ values)
        psi = self._half_v * values
        psi = np.fft.ifft(self._kin_phase * np.fft.fft(psi))
        return self._half_v * psi

    def step(self, values: np.ndarray) -> np.ndarray:
        out = self._raw_step(values)
        if self.check_norm:
            n0 = np.sum(np.abs(values) ** 2) * self.grid.dx
            n1 = np.sum(np.abs(out) ** 2) * self.grid.dx
            if not np.isfinite(n1) or abs(n1 - n0) > NORM_DRIFT_LIMIT:
                raise InstabilityError(
                    f"instability-detected: norm drift {abs(n1 - n0):.3e} in one step")
        return out

    def evolve(self, f: ComplexField, n_steps: int) -> ComplexField:
        values = f.values
        for _ in range(n_steps):
            values = self.step(values)
        return ComplexField(f.grid, values)

    def check_accuracy(self, f: ComplexField):
        """Raise ``InstabilityError`` when dt under-resolves the field's spectrum.

        The bound: the spectral norm fraction whose free phase per step exceeds
        ``PHASE_BOUND[scheme]`` must stay below ``STRAY_FRACTION``; the potential
        phase per step ``max|V| dt`` must obey the same bound.
        """
        bound = PHASE_BOUND[self.cfg.scheme]
        dt = abs(self.dt)
        spec = np.abs(np.fft.fft(f.values)) ** 2
        total = spec.sum()
        if total == 0:
            return
        fast = self.grid.k**2 * dt / (2 * self.mass) > bound
        stray = spec[fast].sum() / total
        if stray > STRAY_FRACTION:
            raise InstabilityError(
                f"instability-detected: {stray:.2e} of the spectral norm advances more than "
                f"{bound:.3f} rad per step (dt={dt:g}, m={self.mass:g})")
        if np.max(np.abs(self.potential)) * dt > bound:
            raise InstabilityError("instability-detected: potential phase per step exceeds bound")


def step_massive(f: ComplexField, cfg: Optional[PropagatorConfig] = None, n_steps: int = 1) -> ComplexField:
    """Advance ``f`` by ``n_steps`` unitary steps (no absorption)."""
    return Propagator(f.grid, cfg).evolve(f, n_steps)


def sponge_profile(grid: Grid, fraction: float = 0.1, strength: float = 20.0) -> np.ndarray:
    """Damping rate eta(x) ramping as sin^2 over the outer ``fraction`` of each side."""
    if grid.boundary == "periodic" or fraction <= 0:
        return np.zeros(grid.n_points)
    width = fraction * grid.length
    x = grid.x
    depth = np.maximum(grid.x_min + width - x, x - (grid.x_max - width))
    depth = np.clip(depth / width, 0.0, 1.0)
    return strength * np.sin(0.5 * np.pi * depth) ** 2


@dataclass(frozen=True)
class PhotonShell:
    """Outgoing photon packet emitted at a capture, transported analytically.

    ``t`` is the time the shell was last advanced to; ``polarization`` is an
    inert tag carried for bookkeeping only.
    """

    origin_site: str
    origin_x: float
    birth_time: float
    omega: float
    thickness: float
    phase0: float = 0.0
    weight: float = 1.0
    c: float = 10.0
    geometry: str = "radial-3d"
    t: Optional[float] = None
    polarization: Optional[str] = None

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        if self.t is None:
            object.__setattr__(self, "t", self.birth_time)

    @property
    def radius(self) -> float:
        return self.c * (self.t - self.birth_time)

    @property
    def phase(self) -> float:
        return self.phase0 - self.omega * (self.t - self.birth_time)


def advance_shells(shells: Iterable[PhotonShell], t: float) -> List[PhotonShell]:
    out = []
    for s in shells:
        if t < s.birth_time:
            raise ValueError(f"cannot advance shell born at {s.birth_time:g} to earlier time {t:g}")
        out.append(replace(s, t=t))
    return out


def emission_envelope(t_rel, tau: float, omega: float = 0.0):
    """Amplitude sqrt(1/tau) exp(-t/(2 tau)) exp(-i omega t); unit integral of |env|^2."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    t_rel = np.asarray(t_rel, float)
    if np.any(t_rel < 0):
        raise ValueError("t_rel must be non-negative")
    out = np.sqrt(1.0 / tau) * np.exp(-t_rel / (2 * tau)) * np.exp(-1j * omega * t_rel)
    return out if out.ndim else complex(out)
