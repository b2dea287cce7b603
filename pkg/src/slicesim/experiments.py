"""Turn-key measurement scenarios.

Each ``run_*`` function builds the field and adsorption sites from a
:class:`~slicesim.config.ScenarioConfig`, runs the capture loop on a
:class:`~slicesim.tower.SliceLedger` and returns a
:class:`~slicesim.report.ScenarioReport` with the branch table, the norm and
energy audits and the scenario's own metrics.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .config import ScenarioConfig, config_hash
from .detector import AdsorptionSite, apply_absorption, book_captures, check_sites, release_atom
from .evolution import Propagator, PropagatorConfig, sponge_profile
from .lattice import (ComplexField, Grid, PacketSpec, expectation_position, make_packet, pulse_centers,
                      raised_cosine, window_norm)
from .report import ScenarioReport
from .tower import (BranchRecord, SliceLedger, born_statistics, branch_distinguishability, capture_clusters,
                    coalesce, field_phase, fit_fringe, interfere_slices, shell_overlap_fraction, total_energy,
                    total_norm)

NORM_TOL = 1e-6
ENERGY_TOL_CAPTURE = 2e-2
ENERGY_TOL_FREE = 1e-6
FULL_CAPTURE_EXPONENT = 35.0  # capture steps run until exp(-rate t) ~ 6e-16


# --------------------------------------------------------------------------
# builders

def build_grid(cfg: ScenarioConfig, n_points: Optional[int] = None) -> Grid:
    g = cfg.grid
    return Grid(n_points or g.n_points, g.dx, g.dt, g.x_min, g.boundary)


def build_site(cfg: ScenarioConfig, s) -> AdsorptionSite:
    return AdsorptionSite.from_tau(s.id, s.x, s.width, cfg.site_tau(s), binding_energy=cfg.site_binding(s),
                                   active=s.active, taper=s.taper)


def build_sites(cfg: ScenarioConfig) -> List[AdsorptionSite]:
    return [build_site(cfg, s) for s in cfg.sites]


def packet_spec(cfg: ScenarioConfig) -> PacketSpec:
    p = cfg.packet
    return PacketSpec(shape=p.shape, x0=p.x0, width=p.width, k0=p.k0, gap=p.gap, count=p.count,
                      weights=p.weights, phases=p.phases, lambda_par=p.lambda_par,
                      phase_offset=p.phase_offset, taper=p.taper)


def build_propagator(cfg: ScenarioConfig, grid: Grid, dt: Optional[float] = None) -> Propagator:
    return Propagator(grid, PropagatorConfig(scheme=cfg.physics.scheme, mass=cfg.physics.mass, dt=dt))


# --------------------------------------------------------------------------
# capture loop

@dataclass
class CaptureRun:
    ledger: SliceLedger
    t: float
    steps: int
    series: Dict[str, list]
    norm_drift: float
    energy_drift: float
    energy0: float
    captured: Dict[str, float]
    profiles: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def residual_norm(self) -> float:
        return self.ledger.residual.norm()


def run_capture(psi: ComplexField, sites: Sequence[AdsorptionSite], prop: Propagator, *, t0: float,
                t_end: float, stop_residual: float = 0.0, propagate: bool = True,
                sponge: Optional[np.ndarray] = None, branch_floor: float = 1e-9, c: float = 10.0,
                geometry: str = "radial-3d", stride: int = 10, run_id: str = "run",
                track_profiles: bool = False) -> CaptureRun:
    """Alternate capture, unitary step and sponge damping from ``t0`` to ``t_end``.

    The ledger norm is audited every step; the energy audit and the time
    series are sampled every ``stride`` steps and at the end.  The loop stops
    early once the residual norm drops below ``stop_residual``.
    """
    grid, dt = psi.grid, prop.dt
    check_sites(sites, grid, dt)
    if propagate:
        prop.check_accuracy(psi)
    ledger = SliceLedger(psi.copy(), energy_fn=prop.energy, branch_floor=branch_floor, run_id=run_id)
    e0 = prop.energy(psi.values)
    e_scale = max(abs(e0), 1e-12)
    mask = None
    if sponge is not None and np.any(sponge > 0):
        mask = np.exp(-sponge * dt)
    ids = [s.id for s in sites]
    captured = dict.fromkeys(ids, 0.0)
    profiles = {s.id: np.zeros(grid.n_points) for s in sites} if track_profiles else {}
    supports = {s.id: s.window(grid) > 0 for s in sites} if track_profiles else {}
    series: Dict[str, list] = {"t": [], "residual_norm": [], "total_norm": [], "energy": []}
    for i in ids:
        series[f"weight_{i}"] = []
    state = {"norm": 0.0, "energy": 0.0}

    def sample(t):
        tn = total_norm(ledger)
        en = total_energy(ledger)
        state["norm"] = max(state["norm"], abs(tn - 1.0))
        state["energy"] = max(state["energy"], abs(en - e0) / e_scale)
        series["t"].append(t)
        series["residual_norm"].append(ledger.residual.norm())
        series["total_norm"].append(tn)
        series["energy"].append(en)
        for i in ids:
            series[f"weight_{i}"].append(captured[i])

    values = psi.values.copy()
    t = t0
    sample(t)
    n_max = max(int(math.ceil((t_end - t0) / dt - 1e-9)), 0)
    step = 0
    for step in range(1, n_max + 1):
        new, events = apply_absorption(ComplexField(grid, values), sites, dt, t,
                                       hamiltonian=prop.hamiltonian, validate=False)
        if track_profiles:
            removed = (np.abs(values) ** 2 - np.abs(new.values) ** 2) * grid.dx
            for i in ids:
                profiles[i] += np.where(supports[i], removed, 0.0)
        book_captures(ledger, events, sites, c=c, geometry=geometry)
        for ev in events:
            captured[ev.site] += ev.weight
        values = new.values
        if propagate:
            values = prop.step(values)
        if mask is not None:
            damped = values * mask
            dn = float(np.sum(np.abs(values) ** 2 - np.abs(damped) ** 2) * grid.dx)
            if dn > 0:
                ledger.record_boundary(dn, prop.energy(values) - prop.energy(damped))
            values = damped
        t = t0 + step * dt
        ledger.residual = ComplexField(grid, values)
        rn = float(np.sum(np.abs(values) ** 2) * grid.dx)
        fast = math.fsum([rn, ledger.boundary_norm, *captured.values()])
        state["norm"] = max(state["norm"], abs(fast - 1.0))
        done = rn < stop_residual
        if step % stride == 0 or done or step == n_max:
            sample(t)
        if done:
            break
    return CaptureRun(ledger, t, step, series, state["norm"], state["energy"], e0, captured, profiles)


def _audits(run: CaptureRun, extra_norm: Optional[float] = None) -> dict:
    any_capture = bool(run.ledger.branches) or run.ledger.pending_weight > 0
    tol_e = ENERGY_TOL_CAPTURE if any_capture else ENERGY_TOL_FREE
    norm = run.norm_drift if extra_norm is None else max(run.norm_drift, extra_norm)
    return {
        "norm_max_drift": norm,
        "norm_tolerance": NORM_TOL,
        "norm_ok": norm <= NORM_TOL,
        "energy_max_drift": run.energy_drift,
        "energy_tolerance": tol_e,
        "energy_ok": run.energy_drift <= tol_e,
        "steps": run.steps,
        "final_residual_norm": run.residual_norm,
        "boundary_norm": run.ledger.boundary_norm,
    }


def _branch_rows(branches: Sequence[BranchRecord], keys: Sequence[str], stds: Sequence[float]) -> List[dict]:
    return [{"key": k, "site": b.site, "weight": b.weight, "time": b.created, "time_std": s,
             "phase": b.phase, "photon_count": b.photon_count}
            for b, k, s in zip(branches, keys, stds)]


def _provenance(cfg: ScenarioConfig) -> dict:
    return {"config_hash": config_hash(cfg), "version": __version__, "seed": cfg.scenario.seed,
            "scheme": cfg.physics.scheme, "geometry": cfg.physics.geometry}


def _coalesced(ledger: SliceLedger, dt: float, prominence: float):
    """Interval branches with their ``site#i`` keys and time spreads."""
    live = [b for b in ledger.branches if not b.released]
    clusters = capture_clusters(live, dt, prominence) if live else []
    merged = coalesce(ledger, dt, prominence) if live else []
    return merged, [c.key for c in clusters], [c.time_std for c in clusters]


def superselection_probe(branches: Sequence[BranchRecord], sites: Dict[str, AdsorptionSite], grid: Grid,
                         prop: Propagator, t: float, flight_steps: int = 10) -> Optional[float]:
    """Visibility of two released slices whose photon counts differ by one.

    Uses the first two branches (or one branch against a copy of itself).
    """
    if not branches:
        return None
    a = branches[0]
    b = branches[1] if len(branches) > 1 else a
    ra, ea = release_atom(a, sites[a.site], 0.0, t, grid)
    rb, eb = release_atom(b, sites[b.site], 0.0, t, grid)
    rb = replace(rb, id=rb.id + 1 if b is a else rb.id, photon_count=rb.photon_count + 1)
    return interfere_slices(ra, rb, ea, eb, prop, flight_steps, t).visibility


def _stride(cfg: ScenarioConfig) -> int:
    return max(int(cfg.output.series_stride), 1)


# --------------------------------------------------------------------------
# time of arrival

def run_time_measurement(cfg: ScenarioConfig) -> ScenarioReport:
    """Pulse train crossing one long site: one capture interval per pulse.

    The clock starts when the head pulse's centre reaches the window's
    leading edge.
    """
    p, phys, prm = cfg.packet, cfg.physics, cfg.scenario.params
    grid = build_grid(cfg)
    sites = build_sites(cfg)
    spec = packet_spec(cfg)
    notes = []
    if spec.shape == "pulse_train" and spec.count > 1 and spec.gap < 3:
        warnings.warn("unresolved-pulses: gap multiplier below 3", stacklevel=2)
        notes.append("unresolved-pulses")
    psi = make_packet(grid, spec)
    prop = build_propagator(cfg, grid)
    v = p.k0 / phys.mass
    first = min(sites, key=lambda s: s.x - s.width / 2)
    lead = first.x - first.width / 2
    t0 = -(lead - p.x0) / v if v > 0 else 0.0
    centers = pulse_centers(spec) if spec.shape == "pulse_train" else np.array([p.x0])
    tau = max(s.tau for s in sites)
    if cfg.scenario.t_end is not None:
        t_end = cfg.scenario.t_end
    else:
        travel = (lead - centers.min()) / v if v > 0 else 0.0
        t_end = t0 + travel + FULL_CAPTURE_EXPONENT * tau
    sponge = sponge_profile(grid, cfg.grid.sponge_fraction, cfg.grid.sponge_strength)
    run = run_capture(psi, sites, prop, t0=t0, t_end=t_end, stop_residual=prm.stop_residual, sponge=sponge,
                      branch_floor=phys.branch_floor, c=phys.c, geometry=phys.geometry, stride=_stride(cfg),
                      run_id=config_hash(cfg))
    ledger = run.ledger
    merged, keys, stds = _coalesced(ledger, grid.dt, prm.cluster_prominence)
    order = np.argsort([b.created for b in merged], kind="stable")
    merged = [merged[i] for i in order]
    keys = [keys[i] for i in order]
    stds = [stds[i] for i in order]
    total = math.fsum(b.weight for b in merged) or 1.0

    pulse_norms = [window_norm(psi, raised_cosine(grid.x, c, p.width)) for c in centers]
    times = [b.created for b in merged]
    sep = list(np.diff(times) / tau) if len(times) > 1 else []
    expected = (p.gap + 2) * p.width / (v * tau) if v > 0 and spec.count > 1 else None
    born = [b.weight / total for b in merged]

    t_final = run.t
    curve = {"t": [], "distinguishability": []}
    if len(merged) > 1:
        a, b = merged[0], merged[1]
        for t in np.linspace(b.created, max(t_final, b.created + 10 * tau), 41):
            curve["t"].append(float(t))
            curve["distinguishability"].append(branch_distinguishability(a, b, float(t)))

    metrics = {
        "t_origin": t0,
        "tau": tau,
        "pulse_norms": pulse_norms,
        "cluster_count": len(merged),
        "born_weights": born,
        "born_vs_pulse_max_error": (max(abs(x - y) for x, y in zip(born, pulse_norms))
                                    if len(born) == len(pulse_norms) else None),
        "cluster_separations_tau": sep,
        "expected_separation_tau": expected,
        "superselection_visibility": superselection_probe(merged, {s.id: s for s in sites}, grid, prop, t_final),
        "notes": notes,
    }
    return ScenarioReport("time_measurement", _branch_rows(merged, keys, stds), _audits(run), metrics,
                          _provenance(cfg), series=run.series, curves={"distinguishability": curve} if curve["t"] else {},
                          events=ledger.event_log_lines())


# --------------------------------------------------------------------------
# position

def run_position_measurement(cfg: ScenarioConfig) -> ScenarioReport:
    """Broad packet over two sites; weights against window integrals plus the
    radiation-overlap tail of the two branches."""
    phys, prm = cfg.physics, cfg.scenario.params
    grid = build_grid(cfg)
    sites = build_sites(cfg)
    psi = make_packet(grid, packet_spec(cfg))
    prop = build_propagator(cfg, grid)
    tau = max(s.tau for s in sites)
    t_end = cfg.scenario.t_end if cfg.scenario.t_end is not None else 40 * tau
    sponge = sponge_profile(grid, cfg.grid.sponge_fraction, cfg.grid.sponge_strength)
    run = run_capture(psi, sites, prop, t0=0.0, t_end=t_end, stop_residual=prm.stop_residual, sponge=sponge,
                      branch_floor=phys.branch_floor, c=phys.c, geometry=phys.geometry, stride=_stride(cfg),
                      run_id=config_hash(cfg))
    ledger = run.ledger
    # one contiguous capture interval per site
    merged, keys, stds = _coalesced(ledger, grid.dt, np.inf)
    born = born_statistics(ledger, "site")
    oracle = {s.id: window_norm(psi, s.window(grid)) for s in sites}

    curve, tail = {}, {}
    if len(merged) >= 2:
        a, b = merged[0], merged[1]
        w = a.shells[-1].thickness
        t_birth = max(a.created, b.created)
        radii = w * prm.r_min_over_w * np.logspace(0, prm.r_decades, prm.curve_points)
        d_rad, d_full, scaled = [], [], []
        for r in radii:
            t = t_birth + r / phys.c
            dr = branch_distinguishability(a, b, t, include_bound=False)
            d_rad.append(dr)
            d_full.append(branch_distinguishability(a, b, t))
            # R of the older shell at t
            r_a = phys.c * (t - min(a.created, b.created))
            scaled.append((1 - dr) * r_a / w)
        beta = prm.proportional_beta
        prop_scaled = [shell_overlap_fraction(r, w, beta * r) * r / w for r in radii]
        curve = {"R": list(radii), "distinguishability": d_full, "radiation_distinguishability": d_rad,
                 "overlap_times_R_over_w": scaled}
        mean = float(np.mean(scaled))
        tail = {
            "site_separation": abs(a.shells[-1].origin_x - b.shells[-1].origin_x),
            "shell_thickness": w,
            "fixed_centers_values": scaled,
            "fixed_centers_relative_spread": (max(scaled) - min(scaled)) / mean if mean > 0 else None,
            "fixed_centers_constant_ok": mean > 0 and (max(scaled) - min(scaled)) / mean <= 0.05,
            "proportional_beta": beta,
            "proportional_values": prop_scaled,
            "proportional_relative_spread": (max(prop_scaled) - min(prop_scaled)) / float(np.mean(prop_scaled)),
        }
    metrics = {
        "born_weights": born,
        "window_norms": oracle,
        "born_vs_window_max_error": max(abs(born[k] - oracle[k]) for k in born),
        "overlap_tail": tail,
        "superselection_visibility": superselection_probe(merged, {s.id: s for s in sites}, grid, prop, run.t),
    }
    curves = {"distinguishability": curve} if curve else {}
    return ScenarioReport("position_measurement", _branch_rows(merged, keys, stds), _audits(run), metrics,
                          _provenance(cfg), series=run.series, curves=curves, events=ledger.event_log_lines())


# --------------------------------------------------------------------------
# revival

def run_revival(cfg: ScenarioConfig) -> ScenarioReport:
    """Absorb at two sites, hold, release both at once and fit the fringe.

    With ``sigma_phi > 0`` each release draws a phase kick of
    ``sigma_phi/sqrt(2)`` so the relative phase has spread ``sigma_phi``; the
    ensemble repeats the release for seeds ``seed + i``.
    """
    phys, prm = cfg.physics, cfg.scenario.params
    grid = build_grid(cfg)
    sites = build_sites(cfg)
    if len(sites) != 2:
        raise ValueError("revival needs exactly two sites")
    by_id = {s.id: s for s in sites}
    psi = make_packet(grid, packet_spec(cfg))
    prop = build_propagator(cfg, grid)
    tau = max(s.tau for s in sites)
    t_cap = prm.capture_time if prm.capture_time is not None else 30 * tau
    sponge = sponge_profile(grid, cfg.grid.sponge_fraction, cfg.grid.sponge_strength)
    run = run_capture(psi, sites, prop, t0=0.0, t_end=t_cap, sponge=sponge, branch_floor=phys.branch_floor,
                      c=phys.c, geometry=phys.geometry, stride=_stride(cfg), run_id=config_hash(cfg))
    ledger = run.ledger
    merged, keys, stds = _coalesced(ledger, grid.dt, np.inf)
    order = [s.id for s in sites]
    merged, keys, stds = map(list, zip(*sorted(zip(merged, keys, stds), key=lambda r: order.index(r[0].site))))
    if len(merged) != 2:
        raise ValueError(f"revival expects one capture interval per site, got {len(merged)}")
    a, b = merged[0], merged[1]
    imprinted = float(np.angle(np.sum(sites[0].marker(grid).values * psi.values))
                      - np.angle(np.sum(sites[1].marker(grid).values * psi.values)))
    imprinted = float((imprinted + np.pi) % (2 * np.pi) - np.pi)

    # swap the fine-grained bins for the two interval branches before release
    ledger.branches = list(merged)
    ledger._by_id = {br.id: br for br in merged}
    t_rel = run.t + prm.hold_time
    sigma = phys.sigma_phi / np.sqrt(2.0)
    rng = np.random.default_rng(cfg.scenario.seed)
    released = []
    for br in (a, b):
        before = br.weight * (br.shells[-1].omega - br.binding_energy) if br.shells else br.weight * br.energy
        rel, emitted = release_atom(br, by_id[br.site], prm.kick, t_rel, grid, sigma_phi=sigma, rng=rng)
        ledger.record_release(rel, emitted, prop.energy(emitted.values) - before, t_rel)
        released.append((rel, emitted))
    (ra, ea), (rb, eb) = released
    norm_after = abs(total_norm(ledger) - 1.0)
    energy_after = abs(total_energy(ledger) - run.energy0) / max(abs(run.energy0), 1e-12)

    flight = Propagator(grid, PropagatorConfig(scheme=phys.scheme, mass=phys.mass, dt=prm.flight_dt))
    flight.check_accuracy(ea)
    steps = int(round(prm.flight_time / prm.flight_dt))
    fringe = interfere_slices(ra, rb, ea, eb, flight, steps, t_rel, prm.visibility_threshold)
    ledger.record_interference(ra, rb, t_rel + prm.flight_time, fringe.visibility)

    # propagated sources without emission phases, for the fit and the ensemble
    ua = ea.values * np.exp(-1j * field_phase(ea))
    ub = eb.values * np.exp(-1j * field_phase(eb))
    for _ in range(steps):
        ua, ub = flight.step(ua), flight.step(ub)

    ensemble = None
    if phys.sigma_phi > 0 and prm.ensemble > 1:
        acc = np.zeros(grid.n_points)
        for i in range(prm.ensemble):
            r = np.random.default_rng(cfg.scenario.seed + i)
            _, fa = release_atom(a, by_id[a.site], prm.kick, t_rel, grid, sigma_phi=sigma, rng=r)
            _, fb = release_atom(b, by_id[b.site], prm.kick, t_rel, grid, sigma_phi=sigma, rng=r)
            acc += np.abs(ua * np.exp(1j * field_phase(fa)) + ub * np.exp(1j * field_phase(fb))) ** 2
        v_ens, ph_ens = fit_fringe(acc / prm.ensemble, ua, ub)
        ensemble = {"runs": prm.ensemble, "visibility": v_ens, "phase": ph_ens,
                    "expected_visibility": float(np.exp(-phys.sigma_phi**2 / 2))}

    audits = _audits(run, extra_norm=norm_after)
    audits["energy_max_drift"] = max(audits["energy_max_drift"], energy_after)
    audits["energy_ok"] = audits["energy_max_drift"] <= audits["energy_tolerance"]
    metrics = {
        "imprinted_phase": imprinted,
        "fitted_phase": fringe.phase,
        "phase_error": None if fringe.phase is None else
        float((fringe.phase - imprinted + np.pi) % (2 * np.pi) - np.pi),
        "visibility": fringe.visibility,
        "contrast": fringe.contrast,
        "coherent": fringe.coherent,
        "reason": fringe.reason,
        "release_time": t_rel,
        "hold_time": prm.hold_time,
        "ensemble": ensemble,
        "superselection_visibility": superselection_probe(merged, by_id, grid, flight, t_rel),
    }
    curves = {"fringe": {"x": list(grid.x), "intensity": list(fringe.intensity)}}
    # the table shows the released slices: their phases carry any release jitter
    return ScenarioReport("revival", _branch_rows([ra, rb], keys, stds), audits, metrics, _provenance(cfg),
                          series=run.series, curves=curves, events=ledger.event_log_lines())


# --------------------------------------------------------------------------
# back reaction

def _two_traps(grid: Grid, separation: float, width: float, weights: Sequence[float]) -> ComplexField:
    w = np.asarray(weights, float)
    if w.shape != (2,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("trap_weights needs two non-negative entries")
    w = w / w.sum()
    psi = np.zeros(grid.n_points, complex)
    for x0, wi in zip((-separation / 2, separation / 2), w):
        bump = raised_cosine(grid.x, x0, width)
        if not bump.any():
            raise ValueError(f"trap at {x0:g} falls outside the grid")
        psi += np.sqrt(wi) * bump / np.sqrt(np.sum(bump**2) * grid.dx)
    return ComplexField(grid, psi)


def run_back_reaction(cfg: ScenarioConfig) -> ScenarioReport:
    """Static heavy system in two traps, measured by which-trap capture.

    The branch centre of mass is taken from the captured density of each
    branch; their weighted mean is compared with the initial expectation.
    """
    phys, prm = cfg.physics, cfg.scenario.params
    grid = build_grid(cfg)
    sep = prm.trap_separation
    if prm.trap_width >= sep:
        raise ValueError("trap_width must be below trap_separation")
    psi = _two_traps(grid, sep, prm.trap_width, prm.trap_weights)
    width = prm.site_width if prm.site_width is not None else min(1.0, 0.9 * sep)
    sites = [AdsorptionSite.from_tau(name, x, width, phys.tau, binding_energy=phys.binding_energy, taper=0.0)
             for name, x in (("left", -sep / 2), ("right", sep / 2))]
    prop = build_propagator(cfg, grid)
    steps = prm.capture_steps or int(math.ceil(FULL_CAPTURE_EXPONENT * phys.tau / grid.dt))
    run = run_capture(psi, sites, prop, t0=0.0, t_end=steps * grid.dt, propagate=False,
                      branch_floor=phys.branch_floor, c=phys.c, geometry=phys.geometry, stride=_stride(cfg),
                      run_id=config_hash(cfg), track_profiles=True)
    ledger = run.ledger
    merged, keys, stds = _coalesced(ledger, grid.dt, np.inf)
    x = grid.x
    cm0 = expectation_position(psi)
    cms, shifts, weights = {}, {}, {}
    for s in sites:
        prof = run.profiles[s.id]
        if prof.sum() > 0:
            cms[s.id] = float(np.sum(x * prof) / np.sum(prof))
            shifts[s.id] = cms[s.id] - cm0
            weights[s.id] = run.captured[s.id]
    wsum = math.fsum(weights.values())
    mean_cm = math.fsum(weights[k] * cms[k] for k in cms) / wsum if wsum > 0 else None
    metrics = {
        "trap_separation": sep,
        "initial_cm": cm0,
        "branch_cm": cms,
        "branch_shift": shifts,
        "abs_shift": {k: abs(v) for k, v in shifts.items()},
        "weighted_cm": mean_cm,
        "weighted_cm_error": None if mean_cm is None else abs(mean_cm - cm0),
        "superselection_visibility": superselection_probe(merged, {s.id: s for s in sites}, grid, prop, run.t),
    }
    return ScenarioReport("back_reaction", _branch_rows(merged, keys, stds), _audits(run), metrics,
                          _provenance(cfg), series=run.series, events=ledger.event_log_lines())


def back_reaction_slope(reports: Sequence[ScenarioReport]) -> dict:
    """Least-squares slope of the per-branch |shift| against trap separation."""
    seps, shifts = [], []
    for r in reports:
        for v in r.metrics["abs_shift"].values():
            seps.append(r.metrics["trap_separation"])
            shifts.append(v)
    slope, intercept = np.polyfit(seps, shifts, 1)
    return {"separations": seps, "abs_shifts": shifts, "slope": float(slope), "intercept": float(intercept)}


# --------------------------------------------------------------------------
# nested measurement

def _nested_sites(cfg: ScenarioConfig, offset: float, tag: str, shift: float = 0.0,
                  active: Optional[Sequence[bool]] = None) -> List[AdsorptionSite]:
    prm, phys = cfg.scenario.params, cfg.physics
    width = prm.site_width if prm.site_width is not None else prm.spacing / 2
    out = []
    for j in range(prm.n_sites):
        out.append(AdsorptionSite.from_tau(
            f"{tag}:s{j}", j * prm.spacing + offset + shift, width, phys.tau,
            binding_energy=phys.binding_energy, taper=0.0,
            active=True if active is None else bool(active[j])))
    return out


def _nested_capture(cfg, psi, sites, steps, scale=1.0):
    # ``scale`` is the device weight a unit-norm projected run stands for; the
    # floor is rescaled so both orderings bin captures identically
    grid = psi.grid
    prop = build_propagator(cfg, grid)
    return run_capture(psi, sites, prop, t0=0.0, t_end=steps * grid.dt, propagate=False,
                       branch_floor=cfg.physics.branch_floor / scale, c=cfg.physics.c, geometry=cfg.physics.geometry,
                       stride=_stride(cfg), run_id=config_hash(cfg)), prop


def run_nested_fuzzy(cfg: ScenarioConfig) -> ScenarioReport:
    """Screen delocalized over two offsets {0, D}, hit by a transverse wave.

    The "after" ordering captures from the joint device-times-screen state
    (the two device configurations occupy two blocks of a doubled grid); the
    "before" ordering projects on the device first and captures from each
    configuration separately, scaling by its weight.  Both tables are built
    and compared; the config's ``meta_order`` picks the one reported.
    """
    phys, prm = cfg.physics, cfg.scenario.params
    base = build_grid(cfg)
    psi = make_packet(base, packet_spec(cfg))
    dw = np.asarray(prm.device_weights, float)
    if dw.shape != (2,) or np.any(dw < 0) or dw.sum() <= 0:
        raise ValueError("device_weights needs two non-negative entries")
    dw = dw / dw.sum()
    offsets = (0.0, prm.spacing)
    n = prm.n_sites
    active = prm.active if prm.active is not None else [True] * (2 * n)
    if len(active) != 2 * n:
        raise ValueError("active needs one flag per (configuration, site)")
    steps = prm.capture_steps or int(math.ceil(FULL_CAPTURE_EXPONENT * phys.tau / base.dt))

    # after: joint state on a doubled grid, block c holds configuration c
    joint = Grid(2 * base.n_points, base.dx, base.dt, base.x_min, base.boundary)
    jvals = np.concatenate([np.sqrt(dw[0]) * psi.values, np.sqrt(dw[1]) * psi.values])
    jsites = []
    for c, off in enumerate(offsets):
        jsites += _nested_sites(cfg, off, f"c{c}", shift=c * base.length, active=active[c * n:(c + 1) * n])
    run_after, jprop = _nested_capture(cfg, ComplexField(joint, jvals), jsites, steps)
    after, akeys, astds = _coalesced(run_after.ledger, base.dt, np.inf)

    # before: device projected first, one unit-norm capture per configuration
    before, bkeys, bstds, runs_before = [], [], [], []
    for c, off in enumerate(offsets):
        sites = _nested_sites(cfg, off, f"c{c}", active=active[c * n:(c + 1) * n])
        r, _ = _nested_capture(cfg, psi, sites, steps, dw[c])
        runs_before.append(r)
        br, k, s = _coalesced(r.ledger, base.dt, np.inf)
        before += [replace(b, weight=dw[c] * b.weight) for b in br]
        bkeys += k
        bstds += s

    rows_after = _branch_rows(after, akeys, astds)
    rows_before = _branch_rows(before, bkeys, bstds)
    rows = rows_after if prm.meta_order == "after" else rows_before
    ba = {r["key"]: r for r in rows_after}
    bb = {r["key"]: r for r in rows_before}
    delta = 0.0
    for k in set(ba) | set(bb):
        if k not in ba or k not in bb:
            delta = float("inf")
            break
        for f in ("weight", "time", "phase"):
            delta = max(delta, abs(ba[k][f] - bb[k][f]))

    # per device site: coherent |sum a|^2 against incoherent sum |a|^2
    fuzzy = []
    for j in range(n):
        amps = []
        for c, off in enumerate(offsets):
            site = _nested_sites(cfg, off, f"c{c}")[j]
            amps.append(np.sqrt(dw[c]) * complex(np.vdot(site.marker(base).values, psi.values) * base.dx))
        fuzzy.append({"site": j, "coherent": abs(sum(amps)) ** 2, "incoherent": sum(abs(a) ** 2 for a in amps),
                      "amplitudes_re": [a.real for a in amps]})

    positive = [r for r in rows if r["weight"] > 0]
    per_config = {f"c{c}": sum(1 for r in positive if r["site"].startswith(f"c{c}:")) for c in range(2)}
    by_id = {s.id: s for s in jsites}
    metrics = {
        "meta_order": prm.meta_order,
        "positive_branches": len(positive),
        "branches_per_configuration": per_config,
        "meta_order_max_delta": delta,
        "fuzzy_sites": fuzzy,
        "superselection_visibility": superselection_probe(after, by_id, joint, jprop, run_after.t),
    }
    audit_src = run_after if prm.meta_order == "after" else max(runs_before, key=lambda r: r.norm_drift)
    audits = _audits(audit_src)
    if prm.meta_order == "before":
        audits["energy_max_drift"] = max(r.energy_drift for r in runs_before)
        audits["energy_ok"] = audits["energy_max_drift"] <= audits["energy_tolerance"]
    return ScenarioReport("nested_fuzzy", rows, audits, metrics, _provenance(cfg),
                          series=run_after.series, events=run_after.ledger.event_log_lines())


RUNNERS = {
    "time_measurement": run_time_measurement,
    "position_measurement": run_position_measurement,
    "revival": run_revival,
    "back_reaction": run_back_reaction,
    "nested_fuzzy": run_nested_fuzzy,
}


def run_scenario(cfg: ScenarioConfig) -> ScenarioReport:
    return RUNNERS[cfg.scenario.name](cfg)
