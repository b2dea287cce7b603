"""Slice ledger for the photon-number tower.

A :class:`SliceLedger` owns the residual photon-free field and every branch
(capture record) split off from it.  Norm and energy audits, Born aggregation,
branch overlaps and slice interference all run on the ledger.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import EmptyLedgerError, IncompleteRunError
from .evolution import PhotonShell, Propagator, advance_shells
from .lattice import ComplexField, field_norm


@dataclass(frozen=True)
class BoundMarker:
    site: str
    x: float
    width: float


@dataclass
class BranchRecord:
    """One slice: captured weight, its phase, photon records and bound atom.

    ``energy`` is the captured local energy per unit weight (the kinetic
    estimate); ``phase`` is the captured phase at ``created`` and advances at
    the binding energy while the atom stays bound.
    """

    id: int
    site: str
    weight: float
    phase: float
    created: float
    photon_count: int = 1
    shells: List[PhotonShell] = field(default_factory=list)
    bound: List[BoundMarker] = field(default_factory=list)
    parent: Optional[int] = None
    energy: float = 0.0
    binding_energy: float = 0.0
    released: bool = False
    members: tuple = ()

    def phase_at(self, t: float) -> float:
        return self.phase + self.binding_energy * (t - self.created)


def _sync_shell(b: BranchRecord):
    # carrier tracks the bin's captured energy so the energy audit closes
    if b.shells:
        b.shells[-1] = replace(b.shells[-1], omega=b.binding_energy + b.energy, weight=b.weight)


def _circular_merge(w1, p1, w2, p2):
    z = w1 * np.exp(1j * p1) + w2 * np.exp(1j * p2)
    return float(np.angle(z)) if abs(z) > 0 else p1


class SliceLedger:
    """Residual field plus all branches, with conservation bookkeeping.

    ``energy_fn`` maps residual values to <H>; without it energy audits only
    see the branch side.
    """

    def __init__(self, residual: ComplexField, energy_fn: Optional[Callable[[np.ndarray], float]] = None,
                 branch_floor: float = 1e-9, run_id: str = "run"):
        self.residual = residual
        self.energy_fn = energy_fn
        self.branch_floor = branch_floor
        self.run_id = run_id
        self.branches: List[BranchRecord] = []
        self.boundary_norm = 0.0
        self.boundary_energy = 0.0
        self.pending: Dict[str, list] = {}
        self.emitted: Dict[int, ComplexField] = {}
        self.external_work = 0.0
        self.log: List[dict] = []
        self._last: Dict[str, int] = {}
        self._by_id: Dict[int, BranchRecord] = {}

    def next_id(self) -> int:
        return len(self.branches)

    def get(self, branch_id: int) -> BranchRecord:
        return self._by_id[branch_id]

    def add_branch(self, branch: BranchRecord):
        if branch.id in self._by_id:
            raise ValueError(f"duplicate branch id {branch.id}")
        held = self.pending.pop(branch.site, None)
        if held is not None:
            w, e, ph = held
            branch.phase = _circular_merge(branch.weight, branch.phase, w, ph)
            branch.energy = (branch.weight * branch.energy + e) / (branch.weight + w)
            branch.weight += w
            _sync_shell(branch)
        self.branches.append(branch)
        self._by_id[branch.id] = branch
        self._last[branch.site] = branch.id
        self.log.append(self._event("capture", branch))

    def merge_capture(self, site: str, weight: float, energy: float, phase: float):
        """Fold a sub-floor capture into the nearest same-site bin (the latest one)."""
        if weight <= 0:
            return
        if site in self._last:
            b = self._by_id[self._last[site]]
            b.phase = _circular_merge(b.weight, b.phase, weight, phase)
            b.energy = (b.weight * b.energy + weight * energy) / (b.weight + weight)
            b.weight += weight
            _sync_shell(b)
            return
        held = self.pending.setdefault(site, [0.0, 0.0, phase])
        held[2] = _circular_merge(held[0], held[2], weight, phase)
        held[0] += weight
        held[1] += weight * energy

    def record_boundary(self, d_norm: float, d_energy: float):
        self.boundary_norm += d_norm
        self.boundary_energy += d_energy

    def record_release(self, branch: BranchRecord, emitted: ComplexField, work: float, t: float):
        self._by_id[branch.id] = branch
        self.branches[[b.id for b in self.branches].index(branch.id)] = branch
        self.emitted[branch.id] = emitted
        self.external_work += work
        self.log.append(self._event("release", branch, t=t))

    def record_interference(self, a: BranchRecord, b: BranchRecord, t: float, visibility: float):
        rec = self._event("interference", a, t=t)
        rec.update(site=f"{a.site}|{b.site}", weight=a.weight + b.weight, phase=visibility,
                   parent=[a.id, b.id])
        self.log.append(rec)

    def _event(self, kind: str, b: BranchRecord, t: Optional[float] = None) -> dict:
        return {"run_id": self.run_id, "kind": kind, "t": b.created if t is None else t,
                "site": b.site, "weight": b.weight, "phase": b.phase,
                "photon_count": b.photon_count, "parent": b.parent, "branch": b.id}

    def event_log_lines(self) -> List[str]:
        return [json.dumps(rec, sort_keys=True) for rec in self.log]

    @property
    def bound_weight(self) -> float:
        return math.fsum(b.weight for b in self.branches if not b.released)

    @property
    def pending_weight(self) -> float:
        return math.fsum(v[0] for v in self.pending.values())


def total_norm(ledger: SliceLedger) -> float:
    parts = [field_norm(ledger.residual), ledger.boundary_norm, ledger.pending_weight]
    parts += [b.weight for b in ledger.branches if not b.released]
    parts += [field_norm(f) for f in ledger.emitted.values()]
    return math.fsum(parts)


def branch_energy(b: BranchRecord) -> float:
    """weight * (-E_b + omega) for a bound branch; omega from its in-flight shell."""
    if b.shells:
        return b.weight * (-b.binding_energy + b.shells[-1].omega)
    return b.weight * b.energy


def total_energy(ledger: SliceLedger, energy_fn: Optional[Callable[[np.ndarray], float]] = None) -> float:
    fn = energy_fn or ledger.energy_fn
    parts = [0.0 if fn is None else fn(ledger.residual.values), ledger.boundary_energy]
    parts += [v[1] for v in ledger.pending.values()]
    parts += [branch_energy(b) for b in ledger.branches if not b.released]
    if fn is not None:
        parts += [fn(f.values) for f in ledger.emitted.values()]
    parts.append(-ledger.external_work)
    return math.fsum(parts)


# --------------------------------------------------------------------------
# clustering of per-step bins into capture events

@dataclass
class Cluster:
    site: str
    index: int
    weight: float
    time: float
    time_std: float
    phase: float
    members: List[int]

    @property
    def key(self) -> str:
        return f"{self.site}#{self.index}"


def capture_clusters(branches: Sequence[BranchRecord], dt: float, prominence: float = 1e-2) -> List[Cluster]:
    """Group per-step capture bins into contiguous capture intervals.

    Per site, the capture-rate series is split at the minimum between
    neighbouring peaks whose prominence exceeds ``prominence`` times the
    largest bin; every bin then belongs to exactly one interval.
    """
    out: List[Cluster] = []
    sites = sorted({b.site for b in branches})
    for site in sites:
        bins = sorted((b for b in branches if b.site == site), key=lambda b: (b.created, b.id))
        t0 = bins[0].created
        idx = np.array([int(round((b.created - t0) / dt)) for b in bins])
        series = np.zeros(idx.max() + 1)
        np.add.at(series, idx, [b.weight for b in bins])
        padded = np.concatenate([[0.0], series, [0.0]])
        peaks, _ = find_peaks(padded, prominence=prominence * series.max())
        peaks = peaks - 1
        cuts = [int(p + np.argmin(series[p:q])) for p, q in zip(peaks[:-1], peaks[1:])]
        edges = [0] + cuts + [len(series)]
        for i, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
            members = [b for b, j in zip(bins, idx) if lo <= j < hi]
            if not members:
                continue
            w = np.array([b.weight for b in members])
            t = np.array([b.created for b in members])
            tot = w.sum()
            mean = float(np.sum(w * t) / tot)
            std = float(np.sqrt(np.sum(w * (t - mean) ** 2) / tot))
            phase = float(np.angle(np.sum(w * np.exp(1j * np.array([b.phase for b in members])))))
            out.append(Cluster(site, i, float(tot), mean, std, phase, [b.id for b in members]))
    return out


def coalesce(ledger: SliceLedger, dt: float, prominence: float = 1e-2) -> List[BranchRecord]:
    """One branch per capture interval, carrying a single shell born at the mean time."""
    merged = []
    live = [b for b in ledger.branches if not b.released]
    for i, cl in enumerate(capture_clusters(live, dt, prominence)):
        members = [ledger.get(j) for j in cl.members]
        w = np.array([b.weight for b in members])
        energy = float(np.sum(w * [b.energy for b in members]) / w.sum())
        # all members of a cluster share site and phase-advance rate
        phase = float(np.angle(np.sum(w * np.exp(1j * np.array([b.phase_at(cl.time) for b in members])))))
        ref = members[int(np.argmax(w))]
        shells = []
        if ref.shells:
            s = ref.shells[-1]
            omega = float(np.sum(w * [m.shells[-1].omega for m in members]) / w.sum())
            shells = [replace(s, birth_time=cl.time, t=cl.time, omega=omega, weight=cl.weight, phase0=phase)]
        merged.append(BranchRecord(
            id=i, site=cl.site, weight=cl.weight, phase=phase, created=cl.time,
            photon_count=ref.photon_count, shells=shells, bound=list(ref.bound),
            parent=ref.parent, energy=energy, binding_energy=ref.binding_energy,
            members=tuple(cl.members)))
    return merged


def born_statistics(ledger: SliceLedger, partition="site", dt: Optional[float] = None,
                    complete_threshold: float = 1e-3) -> Dict[str, float]:
    """Normalized branch weights aggregated by site or by capture interval.

    ``partition`` is ``"site"``, ``"cluster"`` (needs ``dt``) or a callable
    mapping a branch to its key.
    """
    if not ledger.branches:
        raise EmptyLedgerError("ledger has no branches")
    residual = field_norm(ledger.residual)
    if residual > complete_threshold:
        raise IncompleteRunError(f"residual norm {residual:.3e} above {complete_threshold:g}")
    if partition == "cluster":
        if dt is None:
            raise ValueError("cluster partition needs dt")
        masses = {c.key: c.weight for c in capture_clusters(ledger.branches, dt)}
    else:
        keyfn = (lambda b: b.site) if partition == "site" else partition
        masses: Dict[str, float] = {}
        for b in ledger.branches:
            k = keyfn(b)
            masses[k] = masses.get(k, 0.0) + b.weight
    total = math.fsum(masses.values())
    return {k: v / total for k, v in sorted(masses.items())}


# --------------------------------------------------------------------------
# overlaps

def _ball_intersection(r1: float, r2: float, d: float) -> float:
    if r1 <= 0 or r2 <= 0 or d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return 4.0 / 3.0 * np.pi * min(r1, r2) ** 3
    return (np.pi * (r1 + r2 - d) ** 2
            * (d * d + 2 * d * r2 - 3 * r2 * r2 + 2 * d * r1 + 6 * r1 * r2 - 3 * r1 * r1) / (12 * d))


def _shell_volume(r: float, w: float) -> float:
    ri = max(r - w / 2, 0.0)
    return 4.0 / 3.0 * np.pi * ((r + w / 2) ** 3 - ri**3)


def shell_pair_overlap(r1: float, r2: float, w1: float, w2: float, d: float) -> float:
    """Intersection volume of two spherical shells over the geometric mean of their volumes.

    Shell ``i`` occupies radii ``[r_i - w_i/2, r_i + w_i/2]`` (clipped at 0).
    """
    o1, i1 = r1 + w1 / 2, max(r1 - w1 / 2, 0.0)
    o2, i2 = r2 + w2 / 2, max(r2 - w2 / 2, 0.0)
    v = (_ball_intersection(o1, o2, d) - _ball_intersection(o1, i2, d)
         - _ball_intersection(i1, o2, d) + _ball_intersection(i1, i2, d))
    norm = np.sqrt(_shell_volume(r1, w1) * _shell_volume(r2, w2))
    return float(min(max(v / norm, 0.0), 1.0))


def shell_overlap_fraction(R: float, w: float, D: float) -> float:
    """Overlap volume / shell volume for two equal shells with centres ``D`` apart."""
    if R <= 0 or w <= 0 or D < 0:
        raise ValueError("need R > 0, w > 0, D >= 0")
    return shell_pair_overlap(R, R, w, w, D)


def _one_way_overlap(f1, f2, w1, w2, k1, k2):
    # profiles a_i(s) = w_i^-1/2 exp(-s/2w_i - i k_i s), s = distance behind front f_i
    m = min(f1, f2)
    beta = 1 / (2 * w1) + 1 / (2 * w2) + 1j * (k2 - k1)
    expo = -(f1 - m) / (2 * w1) - (f2 - m) / (2 * w2)
    phase = -1j * (k1 * (f1 - m) - k2 * (f2 - m))
    return np.exp(expo + phase) / (np.sqrt(w1 * w2) * beta)


def line_shell_overlap(a: PhotonShell, b: PhotonShell) -> float:
    """|<a|b>| for 1D shells: exponential profiles running both ways at c."""
    ka, kb = a.omega / a.c, b.omega / b.c
    right = _one_way_overlap(a.origin_x + a.radius, b.origin_x + b.radius, a.thickness, b.thickness, ka, kb)
    left = _one_way_overlap(-(a.origin_x - a.radius), -(b.origin_x - b.radius), a.thickness, b.thickness, ka, kb)
    return float(min(abs(0.5 * (right + left)), 1.0))


def _shell_factor(a: BranchRecord, b: BranchRecord, t: float) -> float:
    if a.photon_count != b.photon_count:
        return 0.0
    if not a.shells and not b.shells:
        return 1.0
    if not a.shells or not b.shells:
        return 0.0
    sa, sb = advance_shells([a.shells[-1], b.shells[-1]], t)
    if sa.geometry == "line-1d":
        return line_shell_overlap(sa, sb)
    return shell_pair_overlap(sa.radius, sb.radius, sa.thickness, sb.thickness, abs(sa.origin_x - sb.origin_x))


def _bound_factor(a: BranchRecord, b: BranchRecord) -> float:
    if not a.bound and not b.bound:
        return 1.0
    sa = sorted((m.site for m in a.bound))
    sb = sorted((m.site for m in b.bound))
    # markers of distinct sites have disjoint support
    return 1.0 if sa == sb else 0.0


def branch_distinguishability(a: BranchRecord, b: BranchRecord, t: float, include_bound: bool = True) -> float:
    """1 - |overlap|, the overlap being the product of bound-marker and shell factors."""
    if a is b or (a.id == b.id and a.site == b.site and a.created == b.created):
        return 0.0
    overlap = _shell_factor(a, b, t)
    if include_bound:
        overlap *= _bound_factor(a, b)
    return float(1.0 - overlap)


# --------------------------------------------------------------------------
# slice interference

@dataclass
class FringeReport:
    visibility: float
    phase: Optional[float]
    coherent: bool
    x: np.ndarray
    intensity: np.ndarray
    contrast: float
    reason: str = ""


def field_phase(f: ComplexField) -> float:
    """Density-weighted phase arg(sum psi |psi|)."""
    return float(np.angle(np.sum(f.values * np.abs(f.values))))


def fit_fringe(intensity: np.ndarray, ua: np.ndarray, ub: np.ndarray):
    """Least-squares degree of coherence from a two-source intensity pattern.

    Model ``I = |ua|^2 + |ub|^2 + 2 Re(V e^{i d} ua conj(ub))`` with ``ua``,
    ``ub`` the propagated sources stripped of their emission phases.  Returns
    ``(V, d)``.
    """
    g = ua * np.conj(ub)
    rhs = intensity - np.abs(ua) ** 2 - np.abs(ub) ** 2
    basis = np.stack([2 * g.real, -2 * g.imag], axis=1)
    (X, Y), *_ = np.linalg.lstsq(basis, rhs, rcond=None)
    return float(np.hypot(X, Y)), float(np.arctan2(Y, X))


def _contrast(intensity: np.ndarray, ua: np.ndarray, ub: np.ndarray) -> float:
    # fringe contrast inside the region where both sources are appreciable
    both = np.minimum(np.abs(ua) ** 2, np.abs(ub) ** 2)
    sel = both > 0.25 * both.max() if both.max() > 0 else np.zeros_like(both, bool)
    if not sel.any():
        return 0.0
    i = intensity[sel]
    return float((i.max() - i.min()) / (i.max() + i.min()))


def interfere_slices(a: BranchRecord, b: BranchRecord, emitted_a: ComplexField, emitted_b: ComplexField,
                     propagator: Propagator, flight_steps: int, t: Optional[float] = None,
                     threshold: float = 1e-6) -> FringeReport:
    """Coherently recombine two released slices and fit the fringe.

    Branches that remain distinguishable in any retained degree of freedom
    (different photon number, bound atoms, shells) give the classical mixture
    with visibility 0.
    """
    t = max(a.created, b.created) if t is None else t
    d = branch_distinguishability(a, b, t)
    coherent = a.photon_count == b.photon_count and d <= threshold
    pa, pb = field_phase(emitted_a), field_phase(emitted_b)
    ua = emitted_a.values * np.exp(-1j * pa)
    ub = emitted_b.values * np.exp(-1j * pb)
    for _ in range(flight_steps):
        ua, ub = propagator.step(ua), propagator.step(ub)
    # evolution is linear: the emission phases ride along as constant factors
    fa, fb = ua * np.exp(1j * pa), ub * np.exp(1j * pb)
    x = emitted_a.grid.x
    if not coherent:
        reason = ("photon-count mismatch" if a.photon_count != b.photon_count
                  else f"branches-distinguishable (D={d:.3g})")
        mix = np.abs(fa) ** 2 + np.abs(fb) ** 2
        return FringeReport(0.0, None, False, x, mix, _contrast(mix, ua, ub), reason)
    pattern = np.abs(fa + fb) ** 2
    vis, phase = fit_fringe(pattern, ua, ub)
    return FringeReport(vis, phase, True, x, pattern, _contrast(pattern, ua, ub))
