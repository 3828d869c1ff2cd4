import math

import numpy as np
import pytest

from chdbc import diagnostics as dg
from chdbc import geometry as geo
from chdbc.experiments import fourier_mode, smooth_random_field
from chdbc.geometry import SlabGrid
from chdbc.graphs import MonotoneGraph, PotentialPair, catalog, yosida
from chdbc.stepper import RunConfig, State, initial_state, run, step

CAT = catalog()
G = SlabGrid(12, 11)


def cfg_for(name="regular", grid=G, u0=0.0, **kw):
    return RunConfig(grid=grid, potentials=CAT[name], u0=u0, **kw)


# ---- mass

def test_total_mass_examples():
    assert dg.total_mass(G, State(np.full(G.shape, 0.5), np.zeros(G.shape))) == pytest.approx(0.5, abs=1e-15)
    X, _ = G.mesh
    assert abs(dg.total_mass(G, State(np.cos(2 * np.pi * X), np.zeros(G.shape)))) <= 1e-14


def test_mass_after_100_steps():
    cfg = cfg_for(u0=smooth_random_field(G, seed=3, amplitude=0.6, mean=0.1), t_end=1.0)
    traj = run(cfg)
    masses = np.array([r.mass for r in traj.records])
    assert len(masses) == 101
    assert np.max(np.abs(masses - masses[0])) <= 10 * cfg.linear_tol * 100


# ---- free energy

def test_free_energy_zero_state():
    z = State(np.zeros(G.shape), np.zeros(G.shape))
    for name in CAT:
        assert dg.free_energy(G, z, cfg_for(name)).total == 0.0


@pytest.mark.parametrize("m0", [-0.6, 0.0, 0.35])
def test_free_energy_obstacle_constant(m0):
    g = SlabGrid(10, 9, 2.0, 1.5)
    c2 = 1.0
    cfg = RunConfig(g, catalog(c2=c2)["obstacle"], u0=m0)
    e = dg.free_energy(g, State(np.full(g.shape, m0), np.zeros(g.shape)), cfg)
    assert e.total == pytest.approx(-c2 * m0**2 * (g.Lx * g.Ly + 2 * g.Lx), abs=1e-13)
    assert e.pot == 0.0 and e.bpot == 0.0 and abs(e.grad) <= 1e-13


def test_free_energy_parts_sum_and_kappa_zero():
    u = smooth_random_field(G, seed=1, amplitude=0.8)
    s = State(u, np.zeros(G.shape))
    cfg = cfg_for("dominated", kappa=0.0, g=0.3, g_gamma=-0.2)
    e = dg.free_energy(G, s, cfg)
    assert e.bgrad == 0.0
    assert e.total == pytest.approx(e.grad + e.pot + e.pert + e.bgrad + e.bpot + e.bpert + e.data, rel=1e-14)
    expected_data = -0.3 * np.sum(G.weights * u) + 0.2 * G.hx * np.sum(geo.trace(G, u))
    assert e.data == pytest.approx(expected_data, rel=1e-12)
    assert dg.free_energy(G, s, cfg_for("dominated", kappa=1.0)).bgrad > 0


# ---- dissipation

def test_dissipation_steady_state():
    pot = CAT["regular"]
    g = float(yosida(pot.bulk, 0.1, 0.2) + pot.pi(0.2))
    cfg = cfg_for(u0=0.2, g=g, g_gamma=g)
    s0 = initial_state(cfg)
    s1, _ = step(s0, cfg)
    assert abs(dg.dissipation_balance(G, s0, s1, cfg)) <= 1e-12


def _modal_decrement(grid, du, cfg):
    """``1/2 du^T H du`` for linear graphs without perturbation (oracle from the quadratic energy)."""
    a = 1 / (1 + cfg.eps)
    w = grid.weights.ravel()
    bm = grid.boundary_mask.ravel()
    d = du.ravel()
    hess_diag = w * a + grid.hx * bm * a
    b = geo.trace(grid, du)
    quad = d @ (grid.stiffness @ d) + np.sum(hess_diag * d * d)
    quad += cfg.kappa * geo.h1_boundary_seminorm(grid, b) ** 2
    return 0.5 * quad


@pytest.mark.parametrize("u0", ["mode", "random"])
def test_dissipation_matches_quadratic_decrement(u0):
    pot = PotentialPair(MonotoneGraph.linear(1.0), MonotoneGraph.linear(1.0))
    init = fourier_mode(G, amplitude=0.5, kx=2, ky=1) if u0 == "mode" else smooth_random_field(G, seed=4, amplitude=0.7)
    cfg = RunConfig(G, pot, u0=init, tau=0.5, kappa=0.8, eps=0.2, dt=0.02)
    s = initial_state(cfg)
    for _ in range(4):
        s1, _ = step(s, cfg)
        bal = dg.dissipation_balance(G, s, s1, cfg)
        assert bal == pytest.approx(_modal_decrement(G, s1.u - s.u, cfg), abs=1e-9)
        assert bal > 0
        s = s1


@pytest.mark.parametrize("name", ["regular", "obstacle", "logarithmic", "dominated"])
def test_dissipation_balance_nonnegative(name):
    amp = 0.9 if name in ("obstacle", "logarithmic") else 1.0
    cfg = cfg_for(name, u0=smooth_random_field(G, seed=7, amplitude=amp), dt=0.01, t_end=0.5, kappa=0.3)
    bals = []
    run(cfg, callbacks=[lambda k, s, p, st: p is not None and bals.append(dg.dissipation_balance(G, p, s, cfg))], diagnose=False)
    assert len(bals) == cfg.n_steps
    assert min(bals) >= -1e-10


# ---- records, mean of mu, monitors

def test_record_fields_and_trace_identity():
    cfg = cfg_for("obstacle", u0=smooth_random_field(G, seed=2, amplitude=0.95), eps=0.01, t_end=0.1)
    traj = run(cfg, keep_history=True)
    for rec, u in zip(traj.records, traj.u_history):
        row = rec.as_row()
        assert len(row) == len(dg.CSV_COLUMNS) and np.all(np.isfinite(row))
        viol = max(np.max(np.abs(u)) - 1.0, 0.0)
        assert rec.obstacle_violation == pytest.approx(viol, abs=1e-15)
        if rec.obstacle_violation == 0.0:
            assert rec.e_pot == 0.0
    np.testing.assert_array_equal(traj.final.u_gamma, geo.trace(G, traj.final.u))


def test_first_record_has_zero_rates():
    traj = run(cfg_for(u0=smooth_random_field(G, seed=2, amplitude=0.5), t_end=0.02))
    r0 = traj.records[0]
    assert r0.vstar_dtu == r0.sqrt_tau_dtu == r0.dtu_gamma == 0.0
    assert traj.records[1].vstar_dtu > 0


@pytest.mark.parametrize("splitting", ["implicit-convex", "fully-implicit"])
@pytest.mark.parametrize("name", ["regular", "obstacle", "logarithmic", "dominated"])
def test_mean_mu_identity_each_step(name, splitting):
    # the identity holds up to the Newton residual, so 1e-10 slack needs a tighter solve
    amp = 0.8 if name in ("obstacle", "logarithmic") else 1.0
    cfg = cfg_for(name, u0=smooth_random_field(G, seed=5, amplitude=amp, mean=0.1), splitting=splitting,
                  g=lambda t: 0.2 * np.sin(t) * np.ones(G.shape), g_gamma=0.05, t_end=0.1, newton_tol=1e-11)
    checks = []
    run(cfg, callbacks=[lambda k, s, p, st: checks.append(dg.mean_mu_check(G, s, p, cfg))], diagnose=False)
    assert all(c.holds(1e-10) for c in checks), max(c.defect for c in checks)


def test_mean_mu_defect_bounded_by_newton_tolerance():
    cfg = cfg_for(u0=smooth_random_field(G, seed=5, amplitude=1.0), g=0.1, t_end=0.1)
    checks = []
    run(cfg, callbacks=[lambda k, s, p, st: checks.append(dg.mean_mu_check(G, s, p, cfg))], diagnose=False)
    cap = cfg.newton_tol * (1 + G.perimeter / G.area)
    assert max(c.defect for c in checks) <= cap


def test_estimate_monitor_zero_and_empty():
    rep = dg.estimate_monitor([])
    assert rep.energy_bound == 0.0
    z = State(np.zeros(G.shape), np.zeros(G.shape))
    cfg = cfg_for()
    recs = [dg.record(G, z, None, cfg)]
    for k in range(1, 4):
        zk = State(np.zeros(G.shape), np.zeros(G.shape), k * cfg.dt)
        recs.append(dg.record(G, zk, z, cfg))
    rep = dg.estimate_monitor(recs, kappa=1.0, eps=0.1)
    assert rep.energy_bound == 0.0
    assert all(v == 0.0 for v in rep.l2.values()) and all(v == 0.0 for v in rep.linf.values())


def test_estimate_monitor_aggregates():
    cfg = cfg_for(u0=smooth_random_field(G, seed=6, amplitude=0.5), t_end=0.05)
    recs = run(cfg).records
    rep = dg.estimate_monitor(recs, 1.0, 0.1)
    v = np.array([r.vstar_dtu for r in recs])
    assert rep.l2["vstar_dtu"] == pytest.approx(math.sqrt(np.sum(cfg.dt * v[1:] ** 2)), rel=1e-10)
    assert rep.linf["u_V"] == max(r.u_V for r in recs)


def test_monitor_uniform_over_kappa():
    u0 = smooth_random_field(G, seed=8, amplitude=0.8)
    bounds = []
    for kappa in (1.0, 0.5, 0.25, 0.125):
        recs = run(cfg_for(u0=u0, kappa=kappa, t_end=0.2)).records
        bounds.append(dg.estimate_monitor(recs, kappa, 0.1).energy_bound)
    assert np.all(np.isfinite(bounds))
    assert max(bounds) / min(bounds) <= 10


# ---- CSV

def test_csv_round_trip_and_schema(tmp_path):
    recs = run(cfg_for(u0=smooth_random_field(G, seed=1, amplitude=0.4), t_end=0.03)).records
    p = tmp_path / "d.csv"
    dg.write_csv(p, recs)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(dg.CSV_COLUMNS)
    assert len(lines) == 1 + len(recs)
    assert all(len(v.split("e")[0].split(".")[1]) == 12 for v in lines[1].split(","))
    back = dg.read_csv(p)
    for a, b in zip(recs, back):
        np.testing.assert_allclose(b.as_row(), a.as_row(), rtol=1e-12, atol=1e-300)


def test_read_csv_rejects_other_header(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        dg.read_csv(p)
