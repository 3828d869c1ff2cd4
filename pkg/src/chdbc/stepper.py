"""Backward-Euler time stepping of the Yosida-regularized system.

One step solves, for ``(u, mu)`` at ``t + dt`` on every node,

    (u - u_old)/dt - lap_N mu = 0
    mu - tau (u - u_old)/dt + lap u - beta_eps(u) - pi(u*) + g = 0        (bulk rows)
    (u - u_old)/dt + d_nu u - kappa lap_Gamma u + beta_Gamma,eps(u)
        + pi_Gamma(u*) - g_Gamma = 0                                       (boundary rows)

where ``u* = u_old`` for the default ``implicit-convex`` splitting and
``u* = u`` for ``fully-implicit``. The boundary rows of ``u`` are the trace,
so the dynamic boundary equation replaces the chemical-potential equation on
those rows; the normal derivative there is the summation-by-parts residual
with the boundary Laplacian supplied by the chemical-potential equation.
Multiplied out, every non-mass row is a row of the weak form

    W(mu - tau du/dt - beta_eps(u) - pi(u*) + g) - A u
        - hx [du/dt + kappa K u + beta_Gamma,eps(u) + pi_Gamma(u*) - g_Gamma]_Gamma = 0,

scaled by ``1/w`` on interior rows and by ``-1/hx`` on boundary rows. Testing
the weak form with ``u - u_old`` gives the discrete energy inequality.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .errors import NewtonDivergence, SolverError, ValidationError
from .geometry import SlabGrid
from .graphs import PotentialPair, beta_hat, yosida, yosida_derivative

__all__ = [
    "RunConfig",
    "parameter_violations",
    "State",
    "StepStats",
    "Trajectory",
    "SPLITTINGS",
    "initial_state",
    "residual",
    "jacobian",
    "step",
    "run",
    "eval_bulk_data",
    "eval_boundary_data",
]

log = logging.getLogger(__name__)

SPLITTINGS = ("implicit-convex", "fully-implicit")


def parameter_violations(tau, kappa, eps, dt, t_end, splitting="implicit-convex"):
    """Range checks on the scalar run parameters; returns a list of messages."""
    out = []
    # the model is normalized so that tau and kappa never exceed 1
    if not 0.0 <= tau <= 1.0:
        out.append(f"tau={tau} outside [0, 1] (tau and kappa are normalized to at most 1)")
    if not 0.0 <= kappa <= 1.0:
        out.append(f"kappa={kappa} outside [0, 1] (tau and kappa are normalized to at most 1)")
    if not 0.0 < eps <= 1.0:
        out.append(f"eps={eps} outside (0, 1]")
    if not dt > 0:
        out.append(f"dt={dt} must be positive")
    if not t_end > 0:
        out.append(f"t_end={t_end} must be positive")
    if splitting not in SPLITTINGS:
        out.append(f"splitting {splitting!r} not in {SPLITTINGS}")
    return out


@dataclass
class RunConfig:
    """Physical and numerical parameters of one trajectory.

    ``g`` may be a number, an ``(nx, ny)`` array or a callable ``t -> array``;
    ``g_gamma`` likewise with shape ``(2, nx)``. Callables are sampled at the
    end of each step.
    """

    grid: SlabGrid
    potentials: PotentialPair
    u0: np.ndarray
    tau: float = 1.0
    kappa: float = 1.0
    eps: float = 0.1
    dt: float = 1e-2
    t_end: float = 0.1
    g: object = 0.0
    g_gamma: object = 0.0
    splitting: str = "implicit-convex"
    newton_tol: float = 1e-9
    newton_max_iter: int = 30
    linear_tol: float = 1e-12

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float)
        if self.u0.shape != self.grid.shape:
            self.u0 = np.broadcast_to(self.u0, self.grid.shape).copy()

    def violations(self):
        out = parameter_violations(self.tau, self.kappa, self.eps, self.dt, self.t_end, self.splitting)
        if not np.all(np.isfinite(self.u0)):
            out.append("(A4) u0 has non-finite entries")
        else:
            m0 = geo.mean(self.grid, self.u0)
            lo, hi, _, _ = self.potentials.boundary.domain
            # quadrature of a constant is exact only to rounding
            if not lo + 1e-12 < m0 < hi - 1e-12:
                out.append(f"(A4) m0={m0:.6g} not in the interior of D(beta_Gamma)")
            if not np.all(np.isfinite(beta_hat(self.potentials.bulk, self.u0))):
                out.append("(A4) beta_hat(u0) is not integrable (u0 leaves the effective domain)")
            if not np.all(np.isfinite(beta_hat(self.potentials.boundary, geo.trace(self.grid, self.u0)))):
                out.append("(A4) beta_hat_Gamma(u0Gamma) is not integrable")
        out.extend(self.potentials.violations())
        return out

    def validate(self):
        problems = self.violations()
        if problems:
            raise ValidationError(problems)
        return self

    @property
    def n_steps(self):
        return int(math.ceil(self.t_end / self.dt - 1e-9))

    @property
    def m0(self):
        return geo.mean(self.grid, self.u0)


@dataclass
class State:
    u: np.ndarray
    mu: np.ndarray
    t: float = 0.0

    def copy(self):
        return State(self.u.copy(), self.mu.copy(), self.t)

    @property
    def u_gamma(self):
        return np.stack([self.u[:, 0], self.u[:, -1]])

    def xi(self, cfg: RunConfig):
        return np.asarray(yosida(cfg.potentials.bulk, cfg.eps, self.u))

    def xi_gamma(self, cfg: RunConfig):
        return np.asarray(yosida(cfg.potentials.boundary, cfg.eps, self.u_gamma))


@dataclass
class StepStats:
    iterations: int
    residual: float
    linear_solves: int
    halved: bool = False


@dataclass
class Trajectory:
    """Result of :func:`run`."""

    cfg: RunConfig
    final: State
    times: list
    stats: list
    records: list = field(default_factory=list)
    u_history: list = field(default_factory=list)
    mu_history: list = field(default_factory=list)


def _eval(data, shape, t):
    if callable(data):
        data = data(t)
    arr = np.asarray(data, dtype=float)
    if arr.shape != shape:
        arr = np.broadcast_to(arr, shape)
    return arr


def eval_bulk_data(cfg: RunConfig, t):
    return _eval(cfg.g, cfg.grid.shape, t)


def eval_boundary_data(cfg: RunConfig, t):
    return _eval(cfg.g_gamma, (2, cfg.grid.nx), t)


def _scatter(grid, b):
    out = np.zeros(grid.shape)
    out[:, 0] = b[0]
    out[:, -1] = b[1]
    return out


class _System:
    """Matrices shared by every Newton iteration on one grid."""

    def __init__(self, grid: SlabGrid):
        self.grid = grid
        n = grid.size
        w = grid.weights.ravel()
        bmask = grid.boundary_mask.ravel()
        self.w = w
        self.bmask = bmask
        self.A = grid.stiffness
        self.W = sp.diags(w)
        self.winv_A = (sp.diags(1.0 / w) @ self.A).tocsr()
        # hx-weighted boundary operators acting on full-size vectors
        self.Bhx = sp.diags(grid.hx * bmask.astype(float))
        kline = grid.boundary_stiffness
        idx0 = np.arange(grid.nx) * grid.ny
        idx1 = idx0 + grid.ny - 1
        sel = sp.csr_matrix(
            (np.ones(2 * grid.nx), (np.arange(2 * grid.nx), np.concatenate([idx0, idx1]))),
            shape=(2 * grid.nx, n),
        )
        self.K = (sel.T @ sp.block_diag([kline, kline]) @ sel).tocsr()
        self.scale = np.where(bmask, -1.0 / grid.hx, 1.0 / w)
        self.I = sp.identity(n, format="csr")
        self._jac_cache = {}

    def residual(self, u, mu, u_old, cfg: RunConfig, g, g_gamma):
        pot = cfg.potentials
        dt = cfg.dt
        du = (u - u_old) / dt
        ustar = u if cfg.splitting == "fully-implicit" else u_old
        bm = self.bmask
        r_mass = du + self.winv_A @ mu
        bulk = mu - cfg.tau * du - np.asarray(yosida(pot.bulk, cfg.eps, u)) - pot.pi(ustar) + g
        bnd = np.zeros_like(u)
        ub = u[bm]
        bnd[bm] = (
            du[bm]
            + np.asarray(yosida(pot.boundary, cfg.eps, ub))
            + pot.pi_gamma(ustar[bm])
            - g_gamma[bm]
        )
        bnd += cfg.kappa * (self.K @ u) / self.grid.hx * bm
        weak = self.w * bulk - self.A @ u - self.Bhx @ bnd
        return np.concatenate([r_mass, self.scale * weak])

    def _constant_jacobian(self, dt, kappa):
        key = (dt, kappa)
        J = self._jac_cache.get(key)
        if J is None:
            S = sp.diags(self.scale)
            top = sp.hstack([self.I / dt, self.winv_A])
            bottom = sp.hstack([S @ (-self.A - kappa * self.K), S @ self.W])
            J = self._jac_cache[key] = sp.vstack([top, bottom]).tocsc()
        return J

    def jacobian(self, u, cfg: RunConfig):
        pot = cfg.potentials
        dt = cfg.dt
        bm = self.bmask
        n = u.size
        dbulk = cfg.tau / dt + np.asarray(yosida_derivative(pot.bulk, cfg.eps, u))
        dbnd = np.zeros_like(u)
        dbnd[bm] = 1.0 / dt + np.asarray(yosida_derivative(pot.boundary, cfg.eps, u[bm]))
        if cfg.splitting == "fully-implicit":
            dbulk = dbulk + pot.pi.slope
            dbnd[bm] += pot.pi_gamma.slope
        diag = -self.scale * (self.w * dbulk + self.grid.hx * dbnd)
        # only the (mu-row, u-column) diagonal depends on u
        D = sp.diags(diag, -n, shape=(2 * n, 2 * n), format="csc")
        return (self._constant_jacobian(dt, cfg.kappa) + D).tocsc()


_SYSTEMS: dict = {}


def _system(cfg: RunConfig) -> _System:
    key = cfg.grid
    sys_ = _SYSTEMS.get(key)
    if sys_ is None:
        sys_ = _SYSTEMS[key] = _System(cfg.grid)
    return sys_


def initial_state(cfg: RunConfig) -> State:
    """State at ``t = 0``; ``mu`` solves the weak chemical-potential equation with ``du/dt = 0``."""
    grid = cfg.grid
    s = _system(cfg)
    u = cfg.u0.ravel()
    pot = cfg.potentials
    g = eval_bulk_data(cfg, 0.0).ravel()
    gg = _scatter(grid, eval_boundary_data(cfg, 0.0)).ravel()
    bm = s.bmask
    bnd = np.zeros_like(u)
    bnd[bm] = np.asarray(yosida(pot.boundary, cfg.eps, u[bm])) + pot.pi_gamma(u[bm]) - gg[bm]
    bnd += cfg.kappa * (s.K @ u) / grid.hx * bm
    rhs = s.w * (np.asarray(yosida(pot.bulk, cfg.eps, u)) + pot.pi(u) - g) + s.A @ u + s.Bhx @ bnd
    return State(cfg.u0.copy(), (rhs / s.w).reshape(grid.shape), 0.0)


def _data_at(cfg, t):
    g = eval_bulk_data(cfg, t).ravel()
    gg = _scatter(cfg.grid, eval_boundary_data(cfg, t)).ravel()
    return g, gg


def residual(s_new: State, s_old: State, cfg: RunConfig):
    """Stacked residual ``[mass rows; chemical-potential / boundary rows]``.

    Data are sampled at ``s_new.t``.
    """
    g, gg = _data_at(cfg, s_new.t)
    return _system(cfg).residual(s_new.u.ravel(), s_new.mu.ravel(), s_old.u.ravel(), cfg, g, gg)


def jacobian(s_new: State, s_old: State, cfg: RunConfig):
    """Sparse Jacobian of :func:`residual` with respect to ``(u, mu)`` at ``s_new``."""
    return _system(cfg).jacobian(s_new.u.ravel(), cfg)


def _newton(s_old: State, cfg: RunConfig):
    sys_ = _system(cfg)
    n = cfg.grid.size
    t_new = s_old.t + cfg.dt
    g, gg = _data_at(cfg, t_new)
    u_old = s_old.u.ravel()
    x = np.concatenate([u_old, s_old.mu.ravel()])
    # mass rows carry W^{-1} A mu ~ mu/h^2; measured in units of u they sit above rounding
    weight = np.concatenate([np.full(n, cfg.dt), np.ones(n)])
    res = np.inf
    for it in range(1, cfg.newton_max_iter + 1):
        J = sys_.jacobian(x[:n], cfg)
        r = sys_.residual(x[:n], x[n:], u_old, cfg, g, gg)
        try:
            dx = spla.splu(J).solve(-r)
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed at t={t_new:.6g}: {exc}") from exc
        x = x + dx
        r = sys_.residual(x[:n], x[n:], u_old, cfg, g, gg)
        res = float(np.max(np.abs(weight * r)))
        if not np.isfinite(res):
            break
        if res <= cfg.newton_tol:
            state = State(x[:n].reshape(cfg.grid.shape), x[n:].reshape(cfg.grid.shape), t_new)
            return state, StepStats(it, res, it)
    raise NewtonDivergence(f"Newton stalled at t={t_new:.6g} (residual {res:.3e})", t=t_new)


def step(s_old: State, cfg: RunConfig):
    """Advance one backward-Euler step; returns ``(state, StepStats)``.

    Newton stops once ``max(dt*|r_mass|, |r_rest|) <= cfg.newton_tol``, where
    ``r`` is the stacked :func:`residual`.

    If Newton fails, the step is retried once as two half steps.
    """
    try:
        return _newton(s_old, cfg)
    except NewtonDivergence:
        log.info("Newton failed at t=%.6g; retrying with two half steps", s_old.t + cfg.dt)
    half = replace(cfg, dt=0.5 * cfg.dt)
    mid, st1 = _newton(s_old, half)
    new, st2 = _newton(mid, half)
    new.t = s_old.t + cfg.dt
    return new, StepStats(st1.iterations + st2.iterations, st2.residual, st1.linear_solves + st2.linear_solves, True)


def run(
    cfg: RunConfig,
    callbacks: Sequence[Callable] = (),
    diagnose: bool = True,
    keep_history: bool = False,
    validate: bool = True,
) -> Trajectory:
    """Integrate from ``t = 0`` to ``t_end``.

    Each callback is called as ``cb(k, state, previous_state, stats)`` after
    step ``k`` (``k = 0`` for the initial state, with ``stats = None``).
    With ``diagnose`` a :class:`~chdbc.diagnostics.DiagnosticsRecord` is kept
    for every time level; with ``keep_history`` copies of ``u`` and ``mu`` are.
    """
    if validate:
        cfg.validate()
    if diagnose:
        from .diagnostics import record as _record
    state = initial_state(cfg)
    traj = Trajectory(cfg=cfg, final=state, times=[0.0], stats=[])
    if diagnose:
        traj.records.append(_record(cfg.grid, state, None, cfg))
    if keep_history:
        traj.u_history.append(state.u.copy())
        traj.mu_history.append(state.mu.copy())
    for cb in callbacks:
        cb(0, state, None, None)
    for k in range(1, cfg.n_steps + 1):
        prev = state
        try:
            state, stats = step(prev, cfg)
        except NewtonDivergence as exc:
            raise NewtonDivergence(f"{exc} (step {k})", t=exc.t) from exc
        state.t = k * cfg.dt
        traj.times.append(state.t)
        traj.stats.append(stats)
        if diagnose:
            traj.records.append(_record(cfg.grid, state, prev, cfg))
        if keep_history:
            traj.u_history.append(state.u.copy())
            traj.mu_history.append(state.mu.copy())
        for cb in callbacks:
            cb(k, state, prev, stats)
    traj.final = state
    return traj
