import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slicesim.errors import EmptyLedgerError, IncompleteRunError
from slicesim.evolution import PhotonShell, Propagator, PropagatorConfig
from slicesim.lattice import ComplexField, Grid, make_gaussian, raised_cosine
from slicesim.tower import (BoundMarker, BranchRecord, SliceLedger, _ball_intersection, born_statistics,
                            branch_distinguishability, capture_clusters, coalesce, fit_fringe, interfere_slices,
                            line_shell_overlap, shell_overlap_fraction, shell_pair_overlap, total_norm)

G = Grid(512, 0.1, 0.01, -25.6)


def branch(i, site="A", w=0.1, t=0.0, phase=0.0, x=0.0, photons=1, c=10.0, thick=0.5, geometry="radial-3d",
           omega=2.0, bound=True):
    shell = PhotonShell(site, x, t, omega, thick, phase, w, c, geometry)
    return BranchRecord(i, site, w, phase, t, photons, [shell], [BoundMarker(site, x, 1.0)] if bound else [],
                        energy=1.0, binding_energy=1.0)


def test_ledger_ids_and_log():
    led = SliceLedger(make_gaussian(G, 0.0, 1.0), run_id="r1")
    led.add_branch(branch(0))
    with pytest.raises(ValueError):
        led.add_branch(branch(0))
    (line,) = led.event_log_lines()
    assert line.startswith('{"branch": 0, "kind": "capture"')
    for key in ("run_id", "t", "site", "weight", "phase", "photon_count", "parent"):
        assert f'"{key}"' in line


def test_total_norm_parts():
    f = make_gaussian(G, 0.0, 1.0) * np.sqrt(0.5)
    led = SliceLedger(f)
    led.add_branch(branch(0, w=0.3))
    led.merge_capture("B", 0.1, 0.0, 0.0)
    led.record_boundary(0.1, 0.0)
    assert total_norm(led) == pytest.approx(1.0)


def series_branches(profile, dt, site="A", t0=0.0):
    return [branch(i, site, w, t0 + i * dt, phase=0.1 * i) for i, w in enumerate(profile) if w > 0]


def test_clusters_split_two_bumps_exactly():
    dt = 0.01
    t = np.arange(400) * dt
    p = np.exp(-((t - 1.0) / 0.2) ** 2) + 0.5 * np.exp(-((t - 3.0) / 0.2) ** 2)
    bins = series_branches(p, dt)
    cl = capture_clusters(bins, dt)
    assert [c.key for c in cl] == ["A#0", "A#1"]
    cut = 100 + np.argmin(p[100:300])
    w = np.array([b.weight for b in bins])
    tt = np.array([b.created for b in bins])
    for c, sel in zip(cl, (np.arange(len(bins)) < cut, np.arange(len(bins)) >= cut)):
        assert c.weight == pytest.approx(w[sel].sum(), rel=1e-12)
        assert c.time == pytest.approx(np.sum(w[sel] * tt[sel]) / w[sel].sum(), rel=1e-12)
    assert cl[0].time == pytest.approx(1.0, abs=1e-6)
    assert cl[1].time == pytest.approx(3.0, abs=1e-6)


def test_small_ripples_do_not_split():
    dt = 0.01
    t = np.arange(300) * dt
    p = np.exp(-t) * (1 + 1e-4 * np.sin(40 * t))
    assert len(capture_clusters(series_branches(p, dt), dt)) == 1


def test_coalesce_preserves_weight_and_energy():
    dt = 0.01
    t = np.arange(300) * dt
    p = np.exp(-((t - 1.0) / 0.2) ** 2) + np.exp(-((t - 2.5) / 0.2) ** 2)
    led = SliceLedger(ComplexField(G, np.zeros(G.n_points)))
    for b in series_branches(p / p.sum(), dt):
        led.add_branch(b)
    merged = coalesce(led, dt)
    assert len(merged) == 2
    assert sum(b.weight for b in merged) == pytest.approx(1.0)
    assert all(len(b.shells) == 1 and b.shells[0].birth_time == b.created for b in merged)


def test_born_statistics():
    led = SliceLedger(ComplexField(G, np.zeros(G.n_points)))
    with pytest.raises(EmptyLedgerError):
        born_statistics(led)
    led.add_branch(branch(0, "A", 0.3))
    led.add_branch(branch(1, "B", 0.1))
    led.add_branch(branch(2, "A", 0.2))
    assert born_statistics(led) == pytest.approx({"A": 5 / 6, "B": 1 / 6})
    assert born_statistics(led, partition=lambda b: b.id % 2) == pytest.approx({0: 5 / 6, 1: 1 / 6})
    led.residual = make_gaussian(G, 0.0, 1.0) * 0.1
    with pytest.raises(IncompleteRunError):
        born_statistics(led)


def test_ball_intersection_limits():
    assert _ball_intersection(1.0, 1.0, 0.0) == pytest.approx(4 / 3 * np.pi)
    assert _ball_intersection(1.0, 2.0, 3.0) == 0.0
    assert _ball_intersection(2.0, 1.0, 0.5) == pytest.approx(4 / 3 * np.pi)


def test_ball_intersection_against_monte_carlo():
    rng = np.random.default_rng(0)
    n = 2_000_000
    r1, r2, d = 1.0, 1.3, 1.5
    pts = rng.uniform(-1, 1, (n, 3))
    vol = 8.0
    inside = (np.sum(pts**2, 1) <= r1**2) & (np.sum((pts - [d, 0, 0]) ** 2, 1) <= r2**2)
    assert _ball_intersection(r1, r2, d) == pytest.approx(vol * inside.mean(), rel=0.01)


def mc_shell_fraction(R, w, D, n, rng, chunk=2_000_000):
    """Fraction of shell 1 (centred at 0) that also lies in shell 2 (centred at D x-hat)."""
    hits, done = 0, 0
    lo, hi = max(R - w / 2, 0.0), R + w / 2
    while done < n:
        m = min(chunk, n - done)
        # radius with density r^2 on [lo, hi], direction isotropic
        r = np.cbrt(rng.uniform(lo**3, hi**3, m))
        v = rng.normal(size=(m, 3))
        v *= (r / np.linalg.norm(v, axis=1))[:, None]
        v[:, 0] -= D
        d2 = np.linalg.norm(v, axis=1)
        hits += int(np.count_nonzero((d2 >= lo) & (d2 <= hi)))
        done += m
    return hits / n


@pytest.mark.parametrize("R,w,D", [(10.0, 0.5, 15.0), (40.0, 0.5, 15.0), (5.0, 1.0, 2.0)])
def test_shell_overlap_fraction_against_monte_carlo(R, w, D):
    frac = mc_shell_fraction(R, w, D, 10_000_000, np.random.default_rng(11))
    assert shell_overlap_fraction(R, w, D) == pytest.approx(frac, rel=0.02)


def test_shell_overlap_limits():
    assert shell_overlap_fraction(5.0, 1.0, 0.0) == pytest.approx(1.0)
    assert shell_overlap_fraction(5.0, 1.0, 11.0) == 0.0
    with pytest.raises(ValueError):
        shell_overlap_fraction(0.0, 1.0, 1.0)
    # concentric shells of different radii overlap by their common radial band
    assert shell_pair_overlap(5.0, 5.5, 1.0, 1.0, 0.0) > 0
    assert shell_pair_overlap(5.0, 7.0, 1.0, 1.0, 0.0) == 0.0


def test_shell_overlap_fixed_separation_tends_to_w_over_2d():
    # equal shells, centres fixed: the lens band keeps a fraction ~ w/(2D) for R >> D
    w, d = 0.5, 15.0
    for R in (200.0, 2000.0):
        assert shell_overlap_fraction(R, w, d) == pytest.approx(w / (2 * d), rel=2e-2)


def line_profile(x, shell):
    # both-ways exponential tail behind each front
    out = np.zeros_like(x, complex)
    k = shell.omega / shell.c
    for sgn in (1, -1):
        front = shell.origin_x + sgn * shell.radius
        s = sgn * (front - x)
        ok = s >= 0
        out[ok] += np.exp(-s[ok] / (2 * shell.thickness) - 1j * k * s[ok]) / np.sqrt(shell.thickness)
    return out / np.sqrt(2)


def test_line_shell_overlap_against_quadrature():
    x = np.linspace(-200, 200, 800_001)
    dx = x[1] - x[0]
    a = PhotonShell("A", -3.0, 0.0, 1.0, 2.0, c=10.0, geometry="line-1d", t=8.0)
    b = PhotonShell("B", 3.0, 0.5, 1.4, 2.5, c=10.0, geometry="line-1d", t=8.0)
    num = abs(np.vdot(line_profile(x, a), line_profile(x, b)) * dx)
    assert line_shell_overlap(a, b) == pytest.approx(num, rel=1e-3)
    assert line_shell_overlap(a, a) == pytest.approx(1.0, abs=1e-12)


def test_distinguishability_factors():
    a = branch(0, "A", x=0.0)
    assert branch_distinguishability(a, a, 1.0) == 0.0
    twin = branch(1, "A", x=0.0)
    assert branch_distinguishability(a, twin, 1.0) == pytest.approx(0.0, abs=1e-12)
    more = branch(2, "A", photons=2)
    assert branch_distinguishability(a, more, 1.0) == 1.0
    other = branch(3, "B", x=15.0)
    assert branch_distinguishability(a, other, 1.0) == 1.0
    assert branch_distinguishability(a, other, 1.0, include_bound=False) < 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(1.0, 50.0))
def test_distinguishability_monotone_in_birth_separation(d1, d2, t_obs):
    lo, hi = sorted((d1, d2))
    a = branch(0, t=0.0)
    near = branch(1, t=lo)
    far = branch(2, t=hi)
    t = max(t_obs, hi)
    assert branch_distinguishability(a, far, t) >= branch_distinguishability(a, near, t) - 1e-12


def test_distinguishability_saturates():
    a = branch(0, t=0.0, thick=0.5)
    assert branch_distinguishability(a, branch(1, t=10.0), 100.0) == 1.0


def test_fit_fringe_recovers_synthetic_parameters():
    x = np.linspace(-10, 10, 2001)
    ua = np.exp(-((x + 2) ** 2) / 8 + 1.3j * x)
    ub = np.exp(-((x - 2) ** 2) / 8 - 1.3j * x)
    for V, d in ((1.0, 1.0), (0.6, -2.0), (0.0, 0.0)):
        pattern = np.abs(ua) ** 2 + np.abs(ub) ** 2 + 2 * np.real(V * np.exp(1j * d) * ua * np.conj(ub))
        v_fit, d_fit = fit_fringe(pattern, ua, ub)
        assert v_fit == pytest.approx(V, abs=1e-12)
        if V > 0:
            assert d_fit == pytest.approx(d, abs=1e-12)


def released(i, site, x, phase, photons=1):
    return BranchRecord(i, site, 0.5, phase, 0.0, photons, [], [], released=True)


def test_interfere_slices():
    g = Grid(1024, 0.05, 0.01, -25.6)
    prop = Propagator(g, PropagatorConfig(dt=0.01))
    bump = lambda c: raised_cosine(g.x, c, 3.0) / np.sqrt(np.sum(raised_cosine(g.x, c, 3.0) ** 2) * g.dx)
    fa = ComplexField(g, np.sqrt(0.5) * np.exp(0.7j) * bump(-3.0))
    fb = ComplexField(g, np.sqrt(0.5) * bump(3.0))
    a, b = released(0, "A", -3.0, 0.7), released(1, "B", 3.0, 0.0)
    rep = interfere_slices(a, b, fa, fb, prop, 200)
    assert rep.coherent and rep.visibility == pytest.approx(1.0, abs=1e-9)
    assert rep.phase == pytest.approx(0.7, abs=1e-9)
    rep = interfere_slices(a, released(1, "B", 3.0, 0.0, photons=2), fa, fb, prop, 200)
    assert rep.visibility == 0.0 and not rep.coherent and "photon" in rep.reason
    bound = branch(5, "B", x=3.0)
    rep = interfere_slices(a, bound, fa, fb, prop, 10)
    assert rep.visibility == 0.0
