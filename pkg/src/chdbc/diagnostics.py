"""Per-step monitors: mass, free energy, dissipation and the estimate family.

A :class:`DiagnosticsRecord` is produced for each time level of a run. The
free energy is

    E = 1/2 |grad u|^2 + sum w beta_hat_eps(u) + sum w Pi(u)
        + kappa/2 |grad_Gamma u_Gamma|^2 + sum hx beta_hat_Gamma,eps(u_Gamma)
        + sum hx Pi_Gamma(u_Gamma) - sum w g u - sum hx g_Gamma u_Gamma

with ``Pi`` the antiderivative of the perturbation vanishing at 0. For the
default splitting and time-independent data, one step lowers ``E`` by at least
``dt * (|du/dt|_V*^2 + tau |du/dt|^2 + |du_Gamma/dt|^2)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .graphs import moreau, yosida

__all__ = [
    "DiagnosticsRecord",
    "CSV_COLUMNS",
    "total_mass",
    "free_energy",
    "EnergyParts",
    "dissipation_balance",
    "record",
    "mean_mu_check",
    "MeanMuCheck",
    "MonitorReport",
    "estimate_monitor",
    "write_csv",
    "read_csv",
]

CSV_COLUMNS = (
    "t", "mass", "energy", "e_grad", "e_pot", "e_bgrad", "e_bpot",
    "vstar_dtu", "sqrt_tau_dtu", "dtu_gamma", "u_V", "sqrtkappa_uGamma_V",
    "mu_V", "mu_mean", "xi_H", "xiGamma_H", "lap_u_H", "normal_deriv",
    "obstacle_violation",
)


@dataclass
class DiagnosticsRecord:
    """One row of the per-step table; field order matches :data:`CSV_COLUMNS`."""

    t: float
    mass: float
    energy: float
    e_grad: float
    e_pot: float
    e_bgrad: float
    e_bpot: float
    vstar_dtu: float
    sqrt_tau_dtu: float
    dtu_gamma: float
    u_V: float
    sqrtkappa_uGamma_V: float
    mu_V: float
    mu_mean: float
    xi_H: float
    xiGamma_H: float
    lap_u_H: float
    normal_deriv: float
    obstacle_violation: float

    def as_row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class EnergyParts:
    total: float
    grad: float
    pot: float
    pert: float
    bgrad: float
    bpot: float
    bpert: float
    data: float


def total_mass(grid, s):
    """Integral of ``u`` over the slab."""
    return float(np.sum(grid.weights * s.u))


def _data(cfg, t):
    from .stepper import eval_boundary_data, eval_bulk_data

    return eval_bulk_data(cfg, t), eval_boundary_data(cfg, t)


def free_energy(grid, s, cfg) -> EnergyParts:
    """Regularized free energy of ``s`` with data sampled at ``s.t``."""
    pot = cfg.potentials
    w = grid.weights
    ug = geo.trace(grid, s.u)
    g, gg = _data(cfg, s.t)
    grad = 0.5 * geo.h1_seminorm(grid, s.u) ** 2
    e_pot = float(np.sum(w * moreau(pot.bulk, cfg.eps, s.u)))
    pert = float(np.sum(w * pot.pi.primitive(s.u)))
    bgrad = 0.5 * cfg.kappa * geo.h1_boundary_seminorm(grid, ug) ** 2
    bpot = float(grid.hx * np.sum(moreau(pot.boundary, cfg.eps, ug)))
    bpert = float(grid.hx * np.sum(pot.pi_gamma.primitive(ug)))
    data = -float(np.sum(w * g * s.u)) - float(grid.hx * np.sum(gg * ug))
    total = grad + e_pot + pert + bgrad + bpot + bpert + data
    return EnergyParts(total, grad, e_pot, pert, bgrad, bpot, bpert, data)


def _rates(grid, s_old, s_new, dt):
    """``(|du/dt|_V*, |du/dt|_H, |du_Gamma/dt|_H_Gamma)`` of the backward difference."""
    dtu = (s_new.u - s_old.u) / dt
    # the difference is mean-free up to rounding; remove what is left before N
    dtu0 = dtu - geo.mean(grid, dtu)
    vstar = geo.vstar_norm(grid, dtu0, mean_tol=np.inf) if np.any(dtu0) else 0.0
    return vstar, geo.l2_bulk(grid, dtu), geo.l2_boundary(grid, geo.trace(grid, dtu))


def dissipation_balance(grid, s_old, s_new, cfg):
    """``E(s_old) - E(s_new) - dt * D`` with ``D`` the discrete dissipation rate.

    Nonnegative up to rounding for the default splitting with
    time-independent data.
    """
    dt = s_new.t - s_old.t
    if dt <= 0:
        dt = cfg.dt
    vstar, l2, l2g = _rates(grid, s_old, s_new, dt)
    d = vstar**2 + cfg.tau * l2**2 + l2g**2
    return free_energy(grid, s_old, cfg).total - free_energy(grid, s_new, cfg).total - dt * d


def _violation(graph, z):
    lo, hi, _, _ = graph.domain
    z = np.asarray(z)
    return float(max(np.max(z - hi, initial=0.0), np.max(lo - z, initial=0.0), 0.0))


def record(grid, s, prev, cfg) -> DiagnosticsRecord:
    """Diagnostics of state ``s``; time derivatives use ``prev`` (zero when ``None``)."""
    pot = cfg.potentials
    ug = s.u_gamma
    e = free_energy(grid, s, cfg)
    if prev is None:
        vstar = l2 = l2g = 0.0
    else:
        vstar, l2, l2g = _rates(grid, prev, s, s.t - prev.t if s.t > prev.t else cfg.dt)
    viol = max(_violation(pot.bulk, s.u), _violation(pot.boundary, ug))
    return DiagnosticsRecord(
        t=float(s.t),
        mass=total_mass(grid, s),
        energy=e.total,
        e_grad=e.grad,
        e_pot=e.pot,
        e_bgrad=e.bgrad,
        e_bpot=e.bpot,
        vstar_dtu=vstar,
        sqrt_tau_dtu=math.sqrt(cfg.tau) * l2,
        dtu_gamma=l2g,
        u_V=geo.h1_norm(grid, s.u),
        sqrtkappa_uGamma_V=math.sqrt(cfg.kappa) * geo.h1_boundary_norm(grid, ug),
        mu_V=geo.h1_norm(grid, s.mu),
        mu_mean=geo.mean(grid, s.mu),
        xi_H=geo.l2_bulk(grid, yosida(pot.bulk, cfg.eps, s.u)),
        xiGamma_H=geo.l2_boundary(grid, yosida(pot.boundary, cfg.eps, ug)),
        lap_u_H=geo.l2_bulk(grid, geo.laplacian(grid, s.u)),
        normal_deriv=geo.l2_boundary(grid, geo.normal_derivative(grid, s.u)),
        obstacle_violation=viol,
    )


@dataclass
class MeanMuCheck:
    """Mean of ``mu`` against the value obtained by integrating the chemical-potential rows.

    ``identity`` is that integrated value and ``bound`` the sum of the
    ``L^1`` norms of its terms divided by ``|Omega|``. For a Newton solve
    stopped at tolerance ``tol`` the defect is at most
    ``tol * (1 + |Gamma| / |Omega|)``.
    """

    mean: float
    identity: float
    bound: float

    @property
    def defect(self):
        return abs(self.mean - self.identity)

    def holds(self, slack=1e-10):
        return self.defect <= slack * max(1.0, abs(self.mean)) and abs(self.mean) <= self.bound + slack


def mean_mu_check(grid, s, prev, cfg) -> MeanMuCheck:
    """Integrate the weak chemical-potential equation over the slab.

    The stiffness terms integrate to zero, leaving
    ``|Omega| m(mu) = sum w (tau du/dt + beta_eps(u) + pi(u*) - g)
    + sum hx (du_Gamma/dt + beta_Gamma,eps(u_Gamma) + pi_Gamma(u*_Gamma) - g_Gamma)``.
    """
    pot = cfg.potentials
    w = grid.weights
    if prev is None:
        dtu = np.zeros(grid.shape)
        ustar = s.u
    else:
        dtu = (s.u - prev.u) / (s.t - prev.t)
        ustar = s.u if cfg.splitting == "fully-implicit" else prev.u
    g, gg = _data(cfg, s.t)
    bulk_terms = [cfg.tau * dtu, yosida(pot.bulk, cfg.eps, s.u), pot.pi(ustar), -g]
    ug = geo.trace(grid, s.u)
    bnd_terms = [
        geo.trace(grid, dtu),
        yosida(pot.boundary, cfg.eps, ug),
        pot.pi_gamma(geo.trace(grid, ustar)),
        -gg,
    ]
    ident = sum(float(np.sum(w * t)) for t in bulk_terms) + sum(grid.hx * float(np.sum(t)) for t in bnd_terms)
    bound = sum(float(np.sum(w * np.abs(t))) for t in bulk_terms)
    bound += sum(grid.hx * float(np.sum(np.abs(t))) for t in bnd_terms)
    return MeanMuCheck(geo.mean(grid, s.mu), ident / grid.area, bound / grid.area)


@dataclass
class MonitorReport:
    """``L^2(0,T)`` and ``L^inf(0,T)`` aggregates of every monitored series.

    ``energy_bound`` collects the quantities of the uniform energy estimate:
    ``L^2`` of the three rates, ``L^inf`` of ``|u|_V`` and
    ``sqrt(kappa)|u_Gamma|_V_Gamma``, and ``L^inf`` of the two potential
    integrals.
    """

    kappa: float
    eps: float
    l2: dict
    linf: dict
    energy_bound: float


_MONITORED = CSV_COLUMNS[3:]


def estimate_monitor(records, kappa=float("nan"), eps=float("nan")) -> MonitorReport:
    """Time aggregates of a record series (right-endpoint quadrature in time)."""
    if not records:
        zero = {c: 0.0 for c in _MONITORED}
        return MonitorReport(kappa, eps, zero, dict(zero), 0.0)
    t = np.array([r.t for r in records])
    dts = np.diff(t)
    l2, linf = {}, {}
    for c in _MONITORED:
        v = np.abs(np.array([getattr(r, c) for r in records]))
        l2[c] = float(np.sqrt(np.sum(dts * v[1:] ** 2)))
        linf[c] = float(np.max(v))
    bound = (
        l2["vstar_dtu"] + l2["sqrt_tau_dtu"] + l2["dtu_gamma"]
        + linf["u_V"] + linf["sqrtkappa_uGamma_V"] + linf["e_pot"] + linf["e_bpot"]
    )
    return MonitorReport(kappa, eps, l2, linf, bound)


def write_csv(path, records):
    """Write records with a header row, ``%.12e`` per value."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in records:
            wr.writerow(["%.12e" % v for v in r.as_row()])


def read_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected diagnostics header")
        return [DiagnosticsRecord(*map(float, row)) for row in rd]
