"""Adsorption sites: norm transfer from the free field into branch records."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BranchNotBoundError, CaptureRateError, OverlappingSitesError
from .evolution import PhotonShell, Propagator
from .lattice import ComplexField, Grid, raised_cosine, tukey_window
from .tower import BoundMarker, BranchRecord, SliceLedger

MAX_RATE_STEP = 0.1


@dataclass(frozen=True)
class AdsorptionSite:
    """Capture window of full support ``width`` centred at ``x``.

    ``rate`` is the capture rate 1/tau on the window plateau; ``taper`` is the
    cosine edge length (default width/10, 0 gives a box).
    """

    id: str
    x: float
    width: float
    rate: float
    binding_energy: float = 1.0
    active: bool = True
    taper: Optional[float] = None

    @classmethod
    def from_tau(cls, id, x, width, tau, **kw) -> "AdsorptionSite":
        return cls(id, x, width, 1.0 / tau, **kw)

    @property
    def tau(self) -> float:
        return 1.0 / self.rate

    @property
    def edge(self) -> float:
        return self.width / 10 if self.taper is None else self.taper

    def window(self, grid: Grid) -> np.ndarray:
        return _window(self, grid)

    def marker(self, grid: Grid) -> ComplexField:
        """Normalized bound-state bump delta_d(x - x_s)."""
        return ComplexField(grid, _marker(self, grid))

    def check(self, grid: Grid, dt: float):
        if self.width < 2 * grid.dx:
            raise CaptureRateError(f"site {self.id}: width {self.width:g} < 2*dx")
        if self.rate * dt > MAX_RATE_STEP:
            raise CaptureRateError(
                f"site {self.id}: rate*dt = {self.rate * dt:g} exceeds {MAX_RATE_STEP}")


@lru_cache(maxsize=256)
def _window(site: AdsorptionSite, grid: Grid) -> np.ndarray:
    w = tukey_window(grid.x, site.x, site.width, site.edge)
    w.flags.writeable = False
    return w


@lru_cache(maxsize=256)
def _marker(site: AdsorptionSite, grid: Grid) -> np.ndarray:
    b = raised_cosine(grid.x, site.x, site.width)
    b = b / np.sqrt(np.sum(b**2) * grid.dx)
    b.flags.writeable = False
    return b


@lru_cache(maxsize=16)
def _free_hamiltonian(grid: Grid) -> Callable[[np.ndarray], np.ndarray]:
    return Propagator(grid).hamiltonian


@dataclass(frozen=True)
class CaptureEvent:
    site: str
    t: float
    weight: float
    phase: float
    energy: float


def check_sites(sites: Sequence[AdsorptionSite], grid: Grid, dt: float):
    active = [s for s in sites if s.active]
    for s in active:
        s.check(grid, dt)
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError("site ids must be unique")
    for i, a in enumerate(active):
        for b in active[i + 1:]:
            if np.any(a.window(grid) * b.window(grid) > 0):
                raise OverlappingSitesError(f"sites {a.id} and {b.id} overlap")


def _owners(sites: Sequence[AdsorptionSite], grid: Grid) -> np.ndarray:
    # each grid point belongs to the site whose support holds it, supports
    # dilated by one point so the 3-point Hamiltonian stencil stays local
    owner = np.full(grid.n_points, -1)
    for i, s in enumerate(sites):
        owner[s.window(grid) > 0] = i
    for i, s in enumerate(sites):
        sup = s.window(grid) > 0
        grown = sup | np.roll(sup, 1) | np.roll(sup, -1)
        owner[grown & (owner == -1)] = i
    return owner


def apply_absorption(f: ComplexField, sites: Sequence[AdsorptionSite], dt: float, t: float = 0.0,
                     hamiltonian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                     validate: bool = True) -> Tuple[ComplexField, List[CaptureEvent]]:
    """One capture step: ``psi *= exp(-(rate/2) W_s dt)`` on every active window.

    Returns the depleted field and one event per site that took norm.  The
    removed energy ``<H>_before - <H>_after`` is split between sites by
    locality, so each event's ``energy`` is its captured energy per unit norm.
    """
    grid = f.grid
    active = [s for s in sites if s.active]
    if validate:
        check_sites(active, grid, dt)
    if not active:
        return f, []
    expo = np.zeros(grid.n_points)
    for s in active:
        expo += 0.5 * s.rate * s.window(grid) * dt
    psi = f.values
    new = psi * np.exp(-expo)
    removed = (np.abs(psi) ** 2 - np.abs(new) ** 2) * grid.dx
    if not np.any(removed > 0):
        return ComplexField(grid, new), []

    h = hamiltonian or _free_hamiltonian(grid)
    d_energy = (np.real(np.conj(psi) * h(psi)) - np.real(np.conj(new) * h(new))) * grid.dx
    owner = _owners(active, grid)
    d_norm = np.array([removed[s.window(grid) > 0].sum() for s in active])
    d_e = np.array([d_energy[owner == i].sum() for i in range(len(active))])
    stray = d_energy[owner == -1].sum()
    if d_norm.sum() > 0:
        d_e += stray * d_norm / d_norm.sum()

    events = []
    for i, s in enumerate(active):
        if d_norm[i] <= 0:
            continue
        phase = float(np.angle(np.sum(_marker(s, grid) * psi)))
        events.append(CaptureEvent(s.id, t, float(d_norm[i]), phase, float(d_e[i] / d_norm[i])))
    return ComplexField(grid, new), events


def spawn_branch(event: CaptureEvent, site: AdsorptionSite, t: Optional[float] = None, *,
                 branch_id: int = 0, parent: Optional[BranchRecord] = None, c: float = 10.0,
                 geometry: str = "radial-3d") -> BranchRecord:
    """Branch carrying the captured weight, a bound marker and one outgoing shell."""
    t = event.t if t is None else t
    shell = PhotonShell(
        origin_site=site.id, origin_x=site.x, birth_time=t,
        omega=site.binding_energy + event.energy, thickness=c * site.tau,
        phase0=event.phase, weight=event.weight, c=c, geometry=geometry)
    return BranchRecord(
        id=branch_id, site=site.id, weight=event.weight, phase=event.phase, created=t,
        photon_count=(parent.photon_count if parent else 0) + 1, shells=[shell],
        bound=[BoundMarker(site.id, site.x, site.width)],
        parent=None if parent is None else parent.id,
        energy=event.energy, binding_energy=site.binding_energy)


def book_captures(ledger: SliceLedger, events: Iterable[CaptureEvent], sites: Sequence[AdsorptionSite], *,
                  c: float = 10.0, geometry: str = "radial-3d"):
    """Spawn a branch per event above the ledger's floor; merge the rest."""
    by_id = {s.id: s for s in sites}
    for ev in events:
        if ev.weight > ledger.branch_floor:
            ledger.add_branch(spawn_branch(ev, by_id[ev.site], branch_id=ledger.next_id(), c=c, geometry=geometry))
        else:
            ledger.merge_capture(ev.site, ev.weight, ev.energy, ev.phase)


def release_atom(branch: BranchRecord, site: AdsorptionSite, k_r: float, t: float, grid: Grid, *,
                 sigma_phi: float = 0.0, rng: Optional[np.random.Generator] = None,
                 absorb_shell: bool = True) -> Tuple[BranchRecord, ComplexField]:
    """Eject the bound atom as a bump at the site carrying the branch phase.

    The emitted field has norm ``branch.weight``.  Releasing consumes the
    branch's confined photon (``absorb_shell``) so the released slice keeps
    only its photon count as a record.  ``sigma_phi`` adds zero-mean Gaussian
    phase noise drawn from ``rng``.
    """
    if branch.released or not any(m.site == site.id for m in branch.bound):
        raise BranchNotBoundError(f"branch {branch.id} holds no atom at site {site.id}")
    phase = branch.phase_at(t)
    if sigma_phi > 0:
        if rng is None:
            raise ValueError("sigma_phi > 0 needs a seeded rng")
        phase += rng.normal(0.0, sigma_phi)
    x = grid.x
    values = np.sqrt(branch.weight) * np.exp(1j * phase) * _marker(site, grid) * np.exp(1j * k_r * (x - site.x))
    released = replace(branch, bound=[], shells=[] if absorb_shell else list(branch.shells),
                       released=True, phase=phase, created=t)
    return released, ComplexField(grid, values)
