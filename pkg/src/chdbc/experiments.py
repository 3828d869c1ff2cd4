"""Parameter studies built on :func:`chdbc.stepper.run`.

* :func:`kappa_sweep` compares runs with decreasing surface diffusion against
  the run without it (``kappa = 0``) on the same grid and time step.
* :func:`epsilon_sweep` compares runs with decreasing Yosida parameter.
* :func:`continuous_dependence` measures how a perturbation of the initial
  datum or of the sources propagates, in the norms of the stability estimate.
* :func:`manufactured_convergence` checks the orders of accuracy of the
  scheme against an exact solution of the linear problem.

Time norms follow the scheme: ``C([0,T]; X)`` is the maximum over time levels
and ``L^2(0,T; X)`` is the right-endpoint sum ``sqrt(sum dt |.|_X^2)``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .diagnostics import CSV_COLUMNS, MonitorReport, estimate_monitor
from .errors import MeanError
from .geometry import SlabGrid
from .graphs import MonotoneGraph, PotentialPair, yosida
from .stepper import RunConfig, run

__all__ = [
    "fourier_mode",
    "smooth_random_field",
    "mean_free_noise",
    "Trace",
    "simulate",
    "SweepResult",
    "kappa_sweep",
    "epsilon_sweep",
    "ContDepResult",
    "continuous_dependence",
    "ContDepSweep",
    "contdep_sweep",
    "ManufacturedSolution",
    "ManufacturedReport",
    "manufactured_convergence",
    "fit_slope",
    "write_summary_csv",
    "write_manufactured_csv",
]


# ---------------------------------------------------------------- initial data

def fourier_mode(grid: SlabGrid, amplitude=0.1, kx=1, ky=1, mean=0.0):
    """``mean + amplitude * cos(2 pi kx x / Lx) * cos(pi ky y / Ly)``."""
    X, Y = grid.mesh
    return mean + amplitude * np.cos(2 * np.pi * kx * X / grid.Lx) * np.cos(np.pi * ky * Y / grid.Ly)


def smooth_random_field(grid: SlabGrid, seed=0, amplitude=0.1, mean=0.0, kmax=4):
    """Seeded random field with Gaussian spectral decay.

    Coefficients of ``cos/sin(2 pi m x / Lx) cos(pi n y / Ly)`` for
    ``0 <= m, n <= kmax`` are standard normal, damped by
    ``exp(-(m^2 + n^2) / kmax)``. The result is shifted to the prescribed
    mean and scaled so that ``max |u - mean| = amplitude``.
    """
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh
    out = np.zeros(grid.shape)
    for m in range(kmax + 1):
        for n in range(kmax + 1):
            if m == 0 and n == 0:
                continue
            a, b = rng.standard_normal(2)
            damp = math.exp(-(m * m + n * n) / kmax)
            phase = 2 * np.pi * m * X / grid.Lx
            out += damp * (a * np.cos(phase) + b * np.sin(phase)) * np.cos(np.pi * n * Y / grid.Ly)
    out -= geo.mean(grid, out)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= amplitude / peak
    return out + mean


def mean_free_noise(grid: SlabGrid, seed=0, amplitude=1.0):
    """Smooth mean-free random field with ``max |.| = amplitude`` before re-centering."""
    z = smooth_random_field(grid, seed=seed, amplitude=amplitude, mean=0.0)
    return z - geo.mean(grid, z)


# ---------------------------------------------------------------- trajectories

@dataclass
class Trace:
    """Time levels, fields and diagnostics of one run."""

    cfg: RunConfig
    times: np.ndarray
    u: list
    mu: list
    records: list

    @property
    def monitor(self) -> MonitorReport:
        return estimate_monitor(self.records, self.cfg.kappa, self.cfg.eps)


def simulate(cfg: RunConfig) -> Trace:
    traj = run(cfg, keep_history=True)
    return Trace(cfg, np.asarray(traj.times), traj.u_history, traj.mu_history, traj.records)


def _run_all(cfgs, threads, tag):
    def one(item):
        p, cfg = item
        try:
            return simulate(cfg)
        except Exception as exc:
            exc.args = (f"[{tag}={p:g}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, cfgs))
    return [one(c) for c in cfgs]


def _c_norm(values):
    return float(max(values)) if len(values) else 0.0


def _l2_time(times, values):
    dts = np.diff(times)
    return float(np.sqrt(np.sum(dts * np.asarray(values[1:]) ** 2)))


def _diff_c_h(grid, a: Trace, b: Trace):
    return _c_norm([geo.l2_bulk(grid, x - y) for x, y in zip(a.u, b.u)])


def _diff_l2_v(grid, a: Trace, b: Trace):
    return _l2_time(a.times, [geo.h1_norm(grid, x - y) for x, y in zip(a.u, b.u)])


def _diff_c_hgamma(grid, a: Trace, b: Trace):
    return _c_norm([geo.l2_boundary(grid, geo.trace(grid, x - y)) for x, y in zip(a.u, b.u)])


def _xi_gamma_series(tr: Trace):
    g = tr.cfg.potentials.boundary
    return [np.asarray(yosida(g, tr.cfg.eps, geo.trace(tr.cfg.grid, u))) for u in tr.u]


def _diff_xi_gamma(grid, a: Trace, b: Trace):
    xa, xb = _xi_gamma_series(a), _xi_gamma_series(b)
    return _l2_time(a.times, [geo.l2_boundary(grid, x - y) for x, y in zip(xa, xb)])


def fit_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``; ``nan`` if any value is nonpositive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _nonincreasing(d, rtol=1e-12):
    return all(b <= a * (1 + rtol) + 1e-15 for a, b in zip(d, d[1:]))


def _strictly_decreasing(d):
    return all(b < a for a, b in zip(d, d[1:]))


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepResult:
    """Outcome of a one-parameter sweep.

    ``d_to_ref`` is ``|u_p - u_ref|_C(H)`` (``kappa`` sweeps only),
    ``d_pairwise[j]`` is ``|u_{p_j} - u_{p_{j+1}}|_C(H)``; its last entry is
    ``nan``. Per-value monitors come from :func:`estimate_monitor`.
    """

    name: str
    params: list
    d_to_ref: list
    d_to_ref_V: list
    d_boundary: list
    xi_gamma_diff: list
    d_pairwise: list
    obstacle_violation: list
    rate_fit: float
    monitors: list
    passed: bool
    reasons: list = field(default_factory=list)
    traces: list = field(default_factory=list, repr=False)
    reference: Trace | None = field(default=None, repr=False)

    def monitor_series(self, column, agg="linf"):
        return [getattr(m, agg)[column] for m in self.monitors]


def _check_params(values, name):
    values = [float(v) for v in values]
    if len(values) < 3:
        raise ValueError(f"{name} sweep needs at least 3 values, got {len(values)}")
    if any(not 0.0 < v <= 1.0 for v in values):
        raise ValueError(f"{name} values must lie in (0, 1]: {values}")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} values must be strictly decreasing: {values}")
    return values


def _pairwise(grid, traces):
    return [_diff_c_h(grid, a, b) for a, b in zip(traces, traces[1:])] + [float("nan")]


def kappa_sweep(base: RunConfig, kappas, threads=1) -> SweepResult:
    """Runs at each ``kappa`` plus the ``kappa = 0`` reference.

    A trailing ``0`` in ``kappas`` is taken as the reference request and
    dropped from the sweep values. PASS when ``d_to_ref`` is nonincreasing and
    its last value is at most a tenth of its first.
    """
    kappas = [float(k) for k in kappas]
    if kappas and kappas[-1] == 0.0:
        kappas = kappas[:-1]
    kappas = _check_params(kappas, "kappa")
    base.validate()
    cfgs = [(k, replace(base, kappa=k)) for k in kappas] + [(0.0, replace(base, kappa=0.0))]
    out = _run_all(cfgs, threads, "kappa")
    traces, ref = out[:-1], out[-1]
    grid = base.grid
    d = [_diff_c_h(grid, tr, ref) for tr in traces]
    reasons = []
    if not _nonincreasing(d):
        reasons.append("d_to_ref is not nonincreasing in kappa")
    if not d[-1] <= 0.1 * d[0]:
        reasons.append(f"d_last/d_first = {d[-1] / d[0] if d[0] else float('nan'):.3g} > 0.1")
    return SweepResult(
        name="kappa",
        params=kappas,
        d_to_ref=d,
        d_to_ref_V=[_diff_l2_v(grid, tr, ref) for tr in traces],
        d_boundary=[_diff_c_hgamma(grid, tr, ref) for tr in traces],
        xi_gamma_diff=[_diff_xi_gamma(grid, tr, ref) for tr in traces],
        d_pairwise=_pairwise(grid, traces),
        obstacle_violation=[max(r.obstacle_violation for r in tr.records) for tr in traces],
        rate_fit=fit_slope(kappas, d),
        monitors=[tr.monitor for tr in traces],
        passed=not reasons,
        reasons=reasons,
        traces=traces,
        reference=ref,
    )


def epsilon_sweep(base: RunConfig, epsilons, threads=1) -> SweepResult:
    """Runs at each Yosida parameter; differences between neighbouring values.

    PASS when the pairwise differences are nonincreasing and, for a graph
    with bounded domain, the maximal constraint violation strictly decreases.
    ``rate_fit`` is the slope of ``log d_pairwise`` against ``log eps``.
    """
    epsilons = _check_params(epsilons, "eps")
    base.validate()
    out = _run_all([(e, replace(base, eps=e)) for e in epsilons], threads, "eps")
    grid = base.grid
    d = _pairwise(grid, out)
    viol = [max(r.obstacle_violation for r in tr.records) for tr in out]
    reasons = []
    if not _nonincreasing(d[:-1]):
        reasons.append("pairwise differences are not nonincreasing in eps")
    pot = base.potentials
    bounded = any(math.isfinite(v) for v in pot.bulk.domain[:2] + pot.boundary.domain[:2])
    if bounded and not _strictly_decreasing(viol):
        reasons.append("constraint violation does not strictly decrease with eps")
    return SweepResult(
        name="eps",
        params=epsilons,
        d_to_ref=[float("nan")] * len(out),
        d_to_ref_V=[float("nan")] * len(out),
        d_boundary=[float("nan")] * len(out),
        xi_gamma_diff=[float("nan")] * len(out),
        d_pairwise=d,
        obstacle_violation=viol,
        rate_fit=fit_slope(epsilons[:-1], d[:-1]),
        monitors=[tr.monitor for tr in out],
        passed=not reasons,
        reasons=reasons,
        traces=out,
    )


# ---------------------------------------------------------------- continuous dependence

@dataclass
class ContDepResult:
    """Both sides of the stability estimate for one pair of runs."""

    lhs: float
    rhs: float
    lhs_parts: dict
    rhs_parts: dict

    @property
    def ratio(self):
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else float("inf")
        return self.lhs / self.rhs


def _data_series(cfg, times, which):
    from .stepper import eval_boundary_data, eval_bulk_data

    ev = eval_bulk_data if which == "bulk" else eval_boundary_data
    return [np.asarray(ev(cfg, t)) for t in times]


def continuous_dependence(base: RunConfig, du0=None, dg=None, dg_gamma=None) -> ContDepResult:
    """Run ``base`` and a perturbed copy; compare in the stability-estimate norms.

    ``du0`` must be mean-free (equal masses); ``dg`` and ``dg_gamma`` are
    added to the bulk and boundary sources (constants or arrays).
    """
    grid = base.grid
    if du0 is not None:
        du0 = np.broadcast_to(np.asarray(du0, dtype=float), grid.shape)
        m = geo.mean(grid, du0)
        if abs(m) > 1e-12 * max(1.0, float(np.max(np.abs(du0)))):
            raise MeanError(f"perturbation of u0 changes the mean by {m:.3e}")
    pert = base
    if du0 is not None:
        pert = replace(pert, u0=base.u0 + du0)
    if dg is not None:
        pert = replace(pert, g=_add_data(base.g, dg))
    if dg_gamma is not None:
        pert = replace(pert, g_gamma=_add_data(base.g_gamma, dg_gamma))
    a = simulate(base)
    b = simulate(pert) if pert is not base else a
    tau = base.tau

    diffs = [x - y for x, y in zip(a.u, b.u)]
    vstar = _c_norm([_vstar(grid, z) for z in diffs]) ** 2
    c_h = _c_norm([geo.l2_bulk(grid, z) for z in diffs]) ** 2
    l2_v = _l2_time(a.times, [geo.h1_norm(grid, z) for z in diffs]) ** 2
    c_hg = _c_norm([geo.l2_boundary(grid, geo.trace(grid, z)) for z in diffs]) ** 2
    lhs_parts = {"vstar": vstar, "tau_H": tau * c_h, "L2V": l2_v, "boundary_H": c_hg}

    z0 = diffs[0]
    ga, gb = _data_series(a.cfg, a.times, "bulk"), _data_series(b.cfg, a.times, "bulk")
    gga, ggb = _data_series(a.cfg, a.times, "boundary"), _data_series(b.cfg, a.times, "boundary")
    rhs_parts = {
        "vstar0": _vstar(grid, z0) ** 2,
        "tau_H0": tau * geo.l2_bulk(grid, z0) ** 2,
        "boundary_H0": geo.l2_boundary(grid, geo.trace(grid, z0)) ** 2,
        "g": _l2_time(a.times, [geo.l2_bulk(grid, x - y) for x, y in zip(ga, gb)]) ** 2,
        "g_gamma": _l2_time(a.times, [geo.l2_boundary(grid, x - y) for x, y in zip(gga, ggb)]) ** 2,
    }
    return ContDepResult(sum(lhs_parts.values()), sum(rhs_parts.values()), lhs_parts, rhs_parts)


def _vstar(grid, z):
    z = z - geo.mean(grid, z)
    return geo.vstar_norm(grid, z, mean_tol=np.inf) if np.any(z) else 0.0


def _add_data(base, delta):
    if callable(base):
        return lambda t: np.asarray(base(t)) + delta
    return np.asarray(base, dtype=float) + delta


@dataclass
class ContDepSweep:
    kind: str
    magnitudes: list
    results: list
    c_cap: float

    @property
    def ratios(self):
        return [r.ratio for r in self.results]

    @property
    def spread(self):
        """``max ratio / min ratio`` across magnitudes."""
        r = self.ratios
        return max(r) / min(r) if min(r) > 0 else float("inf")

    @property
    def passed(self):
        r = self.ratios
        return all(math.isfinite(x) and x <= self.c_cap for x in r) and self.spread <= 2.0


def contdep_sweep(base: RunConfig, kind="u0", magnitudes=(1e-1, 1e-2, 1e-3), seed=0, c_cap=1e3) -> ContDepSweep:
    """Continuous dependence over perturbation magnitudes.

    ``kind="u0"`` perturbs the initial datum by ``a cos(2 pi x / Lx)``;
    ``kind="g"`` perturbs the bulk source by ``a`` times seeded mean-free
    smooth noise.
    """
    grid = base.grid
    X, _ = grid.mesh
    results = []
    for a in magnitudes:
        if kind == "u0":
            results.append(continuous_dependence(base, du0=a * np.cos(2 * np.pi * X / grid.Lx)))
        elif kind == "g":
            results.append(continuous_dependence(base, dg=a * mean_free_noise(grid, seed=seed)))
        else:
            raise ValueError(f"unknown perturbation kind {kind!r}")
    return ContDepSweep(kind, list(magnitudes), results, c_cap)


# ---------------------------------------------------------------- manufactured solution

@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution of the linear problem with ``beta = beta_Gamma = identity``.

    ``u = exp(-r t) cos(k x) q(y)`` and ``mu = r exp(-r t) cos(k x) p(y) / k^2`` with
    ``p = 3 Ly y^2 - 2 y^3`` (so ``p' = 0`` at both walls) and
    ``q = p - p'' / k^2``, which makes the mass equation hold exactly. The
    sources ``g`` and ``g_Gamma`` absorb the residual of the other two
    equations, with the Yosida slope ``1 / (1 + eps)`` of the identity.
    """

    Lx: float = 1.0
    Ly: float = 1.0
    tau: float = 1.0
    kappa: float = 1.0
    eps: float = 0.1
    rate: float = 1.0

    @property
    def k(self):
        return 2 * np.pi / self.Lx

    def _p(self, y):
        return 3 * self.Ly * y**2 - 2 * y**3, 6 * self.Ly * y - 6 * y**2, 6 * self.Ly - 12 * y

    def _q(self, y):
        p, p1, p2 = self._p(y)
        k2 = self.k**2
        # p''' = -12, p'''' = 0
        return p - p2 / k2, p1 + 12.0 / k2, p2

    def u(self, grid, t):
        X, Y = grid.mesh
        return math.exp(-self.rate * t) * np.cos(self.k * X) * self._q(Y)[0]

    def mu(self, grid, t):
        X, Y = grid.mesh
        return self.rate * math.exp(-self.rate * t) * np.cos(self.k * X) * self._p(Y)[0] / self.k**2

    def g(self, grid, t):
        X, Y = grid.mesh
        q, _, q2 = self._q(Y)
        a = 1.0 / (1.0 + self.eps)
        c = math.exp(-self.rate * t) * np.cos(self.k * X)
        lap_u = c * (q2 - self.k**2 * q)
        u = c * q
        return -self.tau * self.rate * u - lap_u + a * u - self.mu(grid, t)

    def g_gamma(self, grid, t):
        x = grid.x
        c = math.exp(-self.rate * t) * np.cos(self.k * x)
        a = 1.0 / (1.0 + self.eps)
        out = np.empty((2, grid.nx))
        for row, y, sign in ((0, 0.0, -1.0), (1, self.Ly, 1.0)):
            q, q1, _ = self._q(np.float64(y))
            u = c * q
            out[row] = -self.rate * u + sign * c * q1 + self.kappa * self.k**2 * u + a * u
        return out

    def config(self, grid: SlabGrid, dt, t_end) -> RunConfig:
        lin = MonotoneGraph.linear(1.0)
        return RunConfig(
            grid=grid,
            potentials=PotentialPair(lin, lin, same_growth=True),
            u0=self.u(grid, 0.0),
            tau=self.tau,
            kappa=self.kappa,
            eps=self.eps,
            dt=dt,
            t_end=t_end,
            g=lambda t: self.g(grid, t),
            g_gamma=lambda t: self.g_gamma(grid, t),
        )

    def errors(self, grid, trace: Trace):
        e_h, e_v = [], []
        for t, u in zip(trace.times, trace.u):
            err = u - self.u(grid, t)
            e_h.append(geo.l2_bulk(grid, err))
            e_v.append(geo.h1_norm(grid, err))
        return _c_norm(e_h), _l2_time(trace.times, e_v)


@dataclass
class ManufacturedReport:
    """Rows ``(h, dt, err_H, err_V)`` of both refinement studies and fitted orders."""

    space_rows: list
    time_rows: list
    order_space: float
    order_time: float

    def rows(self):
        return self.space_rows + self.time_rows


def manufactured_convergence(
    solution: ManufacturedSolution | None = None,
    grids=(8, 16, 32),
    space_dt=2.5e-4,
    dts=(0.01, 0.005, 0.0025),
    time_grid=48,
    time_rate=20.0,
    t_end=0.1,
) -> ManufacturedReport:
    """Spatial refinement at a small step, then temporal refinement on a fine grid.

    The temporal study uses the same solution with decay rate ``time_rate`` so
    that the time error dominates the spatial error of ``time_grid``. Orders
    are least-squares slopes of ``log err_H`` against ``log hx`` and ``log dt``.
    """
    sol = solution or ManufacturedSolution()
    space_rows = []
    for n in grids:
        grid = SlabGrid(n, n, sol.Lx, sol.Ly)
        tr = simulate(sol.config(grid, space_dt, t_end))
        space_rows.append((grid.hx, space_dt) + sol.errors(grid, tr))
    sol_t = replace(sol, rate=time_rate)
    time_rows = []
    grid = SlabGrid(time_grid, time_grid, sol.Lx, sol.Ly)
    for dt in dts:
        tr = simulate(sol_t.config(grid, dt, t_end))
        time_rows.append((grid.hx, dt) + sol_t.errors(grid, tr))
    order_space = fit_slope([r[0] for r in space_rows], [r[2] for r in space_rows])
    order_time = fit_slope([r[1] for r in time_rows], [r[2] for r in time_rows])
    return ManufacturedReport(space_rows, time_rows, order_space, order_time)


# ---------------------------------------------------------------- output

_SUMMARY_MONITORS = tuple(c for c in CSV_COLUMNS[3:])


def write_summary_csv(path, result: SweepResult):
    """``param,d_to_ref,d_pairwise,rate_fit`` then sup-in-time monitor aggregates."""
    head = ["param", "d_to_ref", "d_pairwise", "rate_fit", "energy_bound"]
    head += [f"linf_{c}" for c in _SUMMARY_MONITORS] + [f"l2_{c}" for c in _SUMMARY_MONITORS]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(head)
        for j, p in enumerate(result.params):
            m = result.monitors[j]
            row = [p, result.d_to_ref[j], result.d_pairwise[j], result.rate_fit, m.energy_bound]
            row += [m.linf[c] for c in _SUMMARY_MONITORS] + [m.l2[c] for c in _SUMMARY_MONITORS]
            wr.writerow(["%.12e" % v for v in row])


def write_manufactured_csv(path, report: ManufacturedReport):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["h", "dt", "err_H", "err_V", "order_space", "order_time"])
        for row in report.rows():
            wr.writerow(["%.12e" % v for v in (*row, report.order_space, report.order_time)])
