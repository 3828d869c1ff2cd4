import math

import numpy as np
import pytest

from chdbc import geometry as geo
from chdbc import stepper
from chdbc.errors import NewtonDivergence, ValidationError
from chdbc.experiments import smooth_random_field
from chdbc.geometry import SlabGrid
from chdbc.graphs import MonotoneGraph, PotentialPair, catalog, yosida
from chdbc.stepper import RunConfig, State, initial_state, jacobian, residual, run, step

CAT = catalog()
G = SlabGrid(12, 11)


def cfg_for(name="regular", grid=G, u0=0.0, **kw):
    return RunConfig(grid=grid, potentials=CAT[name], u0=u0, **kw)


def steady(name="regular", m0=0.3, **kw):
    pot = CAT[name]
    eps = kw.get("eps", 0.1)
    g = float(yosida(pot.bulk, eps, m0) + pot.pi(m0))
    gg = float(yosida(pot.boundary, eps, m0) + pot.pi_gamma(m0))
    return cfg_for(name, u0=m0, g=g, g_gamma=gg, **kw)


# ---- residual

@pytest.mark.parametrize("name", ["regular", "obstacle", "logarithmic"])
def test_uniform_steady_state_residual(name):
    cfg = steady(name)
    s = State(np.full(G.shape, 0.3), np.zeros(G.shape))
    assert np.max(np.abs(residual(s, s, cfg))) <= 1e-12
    np.testing.assert_allclose(initial_state(cfg).mu, 0.0, atol=1e-12)


def test_zero_state_zero_residual():
    cfg = cfg_for(tau=0.0, kappa=0.0)
    z = State(np.zeros(G.shape), np.zeros(G.shape))
    assert np.all(residual(z, z, cfg) == 0.0)


@pytest.mark.parametrize("splitting", stepper.SPLITTINGS)
@pytest.mark.parametrize("name", ["regular", "logarithmic", "dominated"])
def test_jacobian_matches_central_difference(name, splitting):
    cfg = cfg_for(name, splitting=splitting, kappa=0.7, tau=0.5)
    amp = 0.8 if name == "logarithmic" else 1.2
    s_old = State(smooth_random_field(G, seed=1, amplitude=amp), np.zeros(G.shape))
    s = State(smooth_random_field(G, seed=2, amplitude=amp), smooth_random_field(G, seed=3, amplitude=1.0), cfg.dt)
    J = jacobian(s, s_old, cfg)
    rng = np.random.default_rng(0)
    d = rng.standard_normal(2 * G.size)
    du, dm = d[: G.size].reshape(G.shape), d[G.size :].reshape(G.shape)
    h = 1e-6
    rp = residual(State(s.u + h * du, s.mu + h * dm, s.t), s_old, cfg)
    rm = residual(State(s.u - h * du, s.mu - h * dm, s.t), s_old, cfg)
    fd = (rp - rm) / (2 * h)
    assert np.linalg.norm(J @ d - fd) <= 1e-6 * np.linalg.norm(fd)


def test_obstacle_beta_block_vanishes_inside():
    eps = 0.1
    lin = MonotoneGraph.linear(1.0)
    pot_lin = PotentialPair(lin, lin)
    pot_obs = PotentialPair(MonotoneGraph.obstacle(), MonotoneGraph.obstacle())
    u1 = 0.9 * smooth_random_field(G, seed=4, amplitude=1.0)
    u2 = 0.5 * smooth_random_field(G, seed=5, amplitude=1.0)
    z = np.zeros(G.shape)
    c_obs = RunConfig(G, pot_obs, u0=0.0, eps=eps)
    c_lin = RunConfig(G, pot_lin, u0=0.0, eps=eps)
    J1 = jacobian(State(u1, z), State(z, z), c_obs)
    J2 = jacobian(State(u2, z), State(z, z), c_obs)
    assert (J1 - J2).count_nonzero() == 0
    # against the linear graph the only difference is its slope 1/(1+eps) on the (mu-row, u-col) diagonal
    diff = (jacobian(State(u1, z), State(z, z), c_lin) - J1).toarray()
    n = G.size
    w = G.weights.ravel()
    bm = G.boundary_mask.ravel()
    scale = np.where(bm, -1.0 / G.hx, 1.0 / w)
    expect = -scale * (w + G.hx * bm) / (1 + eps)
    np.testing.assert_allclose(np.diag(diff[n:, :n]), expect, rtol=1e-13)
    diff[n:, :n] -= np.diag(expect)
    assert np.max(np.abs(diff)) <= 1e-9


# ---- step

@pytest.mark.parametrize("name", ["regular", "obstacle", "logarithmic", "linear"])
def test_uniform_steady_state_step(name):
    cfg = steady(name)
    s0 = initial_state(cfg)
    s1, stats = step(s0, cfg)
    assert stats.iterations == 1
    np.testing.assert_allclose(s1.u, s0.u, atol=1e-12)
    np.testing.assert_allclose(s1.mu, s0.mu, atol=1e-10)
    assert s1.t == pytest.approx(cfg.dt)


def test_linear_graph_one_newton_iteration():
    for seed in range(3):
        u0 = smooth_random_field(G, seed=seed, amplitude=2.0, mean=0.1)
        cfg = cfg_for("linear", u0=u0, tau=0.3, kappa=0.6)
        _, stats = step(initial_state(cfg), cfg)
        assert stats.iterations == 1


def test_obstacle_inside_converges_in_one_iteration():
    u0 = smooth_random_field(G, seed=3, amplitude=0.3)
    cfg = cfg_for("obstacle", u0=u0)
    _, stats = step(initial_state(cfg), cfg)
    assert stats.iterations == 1


@pytest.mark.parametrize("name", ["regular", "obstacle", "logarithmic", "dominated"])
def test_mean_preserved_one_step(name):
    u0 = smooth_random_field(G, seed=11, amplitude=0.6, mean=0.2)
    cfg = cfg_for(name, u0=u0, tau=1.0, kappa=1.0)
    s0 = initial_state(cfg)
    s1, stats = step(s0, cfg)
    assert abs(geo.mean(G, s1.u) - geo.mean(G, s0.u)) <= 1e-11
    assert stats.residual <= cfg.newton_tol


def _modal_oracle(grid, U0, k, tau, kappa, eps, dt):
    """One backward-Euler step for u = cos(2 pi k x / Lx) U(y), linear graphs, pi = 0.

    Built from the 1-D y stencils; the x-direction reduces to its Fourier symbol.
    """
    ny, hy, hx = grid.ny, grid.hy, grid.hx
    sx = (2 - 2 * math.cos(2 * math.pi * k * hx / grid.Lx)) / hx**2
    wy = np.full(ny, hy)
    wy[[0, -1]] = hy / 2
    Ky = (2 * np.eye(ny) - np.eye(ny, k=1) - np.eye(ny, k=-1)) / hy
    Ky[0, 0] = Ky[-1, -1] = 1 / hy
    E = np.zeros(ny)
    E[[0, -1]] = 1.0
    a = 1 / (1 + eps)
    I = np.eye(ny)
    # unknowns (U, M); rhs from U0
    top = np.hstack([I / dt, sx * I + Ky / wy[:, None]])
    bot_u = -np.diag(wy) * (tau / dt + a) - sx * np.diag(wy) - Ky - np.diag(E * (1 / dt + kappa * sx + a))
    bot = np.hstack([bot_u, np.diag(wy)])
    rhs = np.concatenate([U0 / dt, -(wy * tau / dt + E / dt) * U0])
    sol = np.linalg.solve(np.vstack([top, bot]), rhs)
    return sol[:ny], sol[ny:]


@pytest.mark.parametrize("k", [1, 3])
@pytest.mark.parametrize("tau,kappa", [(1.0, 1.0), (0.0, 0.5), (0.5, 0.0)])
def test_single_mode_matches_modal_reduction(k, tau, kappa):
    grid = SlabGrid(16, 13, 2.0, 1.5)
    X, Y = grid.mesh
    U0 = np.cos(np.pi * grid.y / grid.Ly) + 0.4 * grid.y
    cx = np.cos(2 * np.pi * k * grid.x / grid.Lx)
    pot = PotentialPair(MonotoneGraph.linear(1.0), MonotoneGraph.linear(1.0))
    cfg = RunConfig(grid, pot, u0=np.outer(cx, U0), tau=tau, kappa=kappa, eps=0.2, dt=0.05)
    s = initial_state(cfg)
    for _ in range(3):
        U_exp, M_exp = _modal_oracle(grid, U0, k, tau, kappa, 0.2, 0.05)
        s, _ = step(s, cfg)
        np.testing.assert_allclose(s.u, np.outer(cx, U_exp), atol=1e-10)
        np.testing.assert_allclose(s.mu, np.outer(cx, M_exp), atol=1e-10)
        U0 = U_exp


def test_fully_implicit_solves_its_own_residual():
    u0 = smooth_random_field(G, seed=8, amplitude=0.5)
    cfg = cfg_for("regular", u0=u0, splitting="fully-implicit")
    s0 = initial_state(cfg)
    s1, _ = step(s0, cfg)
    r = residual(s1, s0, cfg)
    n = G.size
    assert max(cfg.dt * np.abs(r[:n]).max(), np.abs(r[n:]).max()) <= cfg.newton_tol


def test_tau_continuity():
    u0 = smooth_random_field(G, seed=9, amplitude=0.5)
    a = run(cfg_for("regular", u0=u0, tau=0.0, t_end=0.05), diagnose=False).final.u
    b = run(cfg_for("regular", u0=u0, tau=1e-8, t_end=0.05), diagnose=False).final.u
    assert 0 < geo.l2_bulk(G, a - b) <= 1e-6


# ---- failure handling

def test_half_step_retry(monkeypatch):
    real = stepper._newton
    calls = []

    def flaky(s_old, cfg):
        calls.append(cfg.dt)
        if cfg.dt > 0.006:
            raise NewtonDivergence("forced", t=s_old.t + cfg.dt)
        return real(s_old, cfg)

    monkeypatch.setattr(stepper, "_newton", flaky)
    cfg = cfg_for(u0=smooth_random_field(G, seed=1, amplitude=0.4))
    s1, stats = step(initial_state(cfg), cfg)
    assert stats.halved and calls == [0.01, 0.005, 0.005]
    assert s1.t == pytest.approx(0.01)


def test_newton_divergence_reports_time():
    cfg = cfg_for("logarithmic", u0=smooth_random_field(G, seed=1, amplitude=0.9), newton_max_iter=1, eps=1e-3)
    with pytest.raises(NewtonDivergence) as exc:
        run(cfg, diagnose=False)
    assert exc.value.t == pytest.approx(0.005)
    assert "step 1" in str(exc.value)


@pytest.mark.parametrize(
    "kw,needle",
    [
        (dict(kappa=1.5), "kappa=1.5"),
        (dict(tau=-0.1), "tau=-0.1"),
        (dict(eps=0.0), "eps=0.0"),
        (dict(dt=0.0), "dt=0.0"),
        (dict(splitting="explicit"), "splitting"),
    ],
)
def test_invalid_parameters(kw, needle):
    with pytest.raises(ValidationError) as exc:
        run(cfg_for(**kw))
    assert any(needle in v for v in exc.value.violations)


def test_invalid_initial_mean_and_domain():
    with pytest.raises(ValidationError) as exc:
        cfg_for("obstacle", u0=1.0).validate()
    assert any("m0" in v for v in exc.value.violations)
    u0 = np.zeros(G.shape)
    u0[3, 4] = 1.5
    with pytest.raises(ValidationError) as exc:
        cfg_for("logarithmic", u0=u0).validate()
    assert any("beta_hat(u0)" in v for v in exc.value.violations)


# ---- run

def test_run_counts_steps_and_times():
    seen = []
    cfg = cfg_for(u0=smooth_random_field(G, seed=0, amplitude=0.3), dt=0.01, t_end=0.03)
    traj = run(cfg, callbacks=[lambda k, s, p, st: seen.append((k, s.t))])
    assert [k for k, _ in seen] == [0, 1, 2, 3]
    assert len(traj.stats) == 3 and len(traj.records) == 4
    np.testing.assert_allclose([t for _, t in seen], [0, 0.01, 0.02, 0.03], rtol=0, atol=1e-15)


def test_time_dependent_data_sampled_at_step_end():
    seen = []
    cfg = cfg_for(u0=0.0, g=lambda t: np.full(G.shape, t), dt=0.01, t_end=0.02)
    cfg.g = lambda t, _g=cfg.g: (seen.append(t), _g(t))[1]
    run(cfg, diagnose=False)
    assert 0.01 in seen and 0.02 in seen


@pytest.mark.parametrize("name", ["regular", "obstacle", "logarithmic"])
def test_energy_nonincreasing_along_run(name):
    from chdbc.diagnostics import free_energy

    amp = 0.7 if name != "regular" else 1.0
    cfg = cfg_for(name, u0=smooth_random_field(G, seed=2, amplitude=amp), t_end=0.3, dt=0.02, kappa=0.5)
    energies = []
    run(cfg, callbacks=[lambda k, s, p, st: energies.append(free_energy(G, s, cfg).total)], diagnose=False)
    assert np.all(np.diff(energies) <= 1e-10)
