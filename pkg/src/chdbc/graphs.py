"""Maximal monotone graphs on the real line and their Yosida/Moreau calculus.

Every graph in the catalog has the form

    beta(r) = scale * base(r) + lin * r

where ``base`` is one of

* ``linear``       base(r) = coef * r                    D = R
* ``cubic``        base(r) = coef * r**3                 D = R
* ``obstacle``     base = subdifferential of I_[-1,1]    D = [-1, 1]
* ``logarithmic``  base(r) = ln(1 + r) - ln(1 - r)       D = (-1, 1)

All functions accept scalars or numpy arrays and evaluate elementwise.
Scalar input gives a Python float back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import xlogy

from .errors import ConvergenceError, DomainError, ValidationError

__all__ = [
    "MonotoneGraph",
    "Perturbation",
    "PotentialPair",
    "DominationReport",
    "beta_min_section",
    "beta_hat",
    "resolvent",
    "yosida",
    "yosida_derivative",
    "moreau",
    "pi_eval",
    "check_domination",
    "check_yosida_contract",
    "catalog",
    "ROOT_TOL",
]

KINDS = ("linear", "cubic", "obstacle", "logarithmic")

ROOT_TOL = 1e-12
ROOT_MAX_ITER = 100


@dataclass(frozen=True)
class MonotoneGraph:
    """An affine composite ``scale * base + lin * r`` of a cataloged graph."""

    kind: str
    coef: float = 1.0
    scale: float = 1.0
    lin: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown graph kind {self.kind!r}; expected one of {KINDS}")
        if self.scale <= 0 or self.lin < 0:
            raise ValueError("affine composite needs scale > 0 and lin >= 0")
        if self.kind == "linear" and self.coef < 0:
            raise ValueError("linear graph needs a nonnegative slope")
        if self.kind == "cubic" and self.coef <= 0:
            raise ValueError("cubic graph needs a positive coefficient")

    @classmethod
    def linear(cls, slope=1.0):
        return cls("linear", coef=float(slope))

    @classmethod
    def cubic(cls, coef=1.0):
        return cls("cubic", coef=float(coef))

    @classmethod
    def obstacle(cls):
        return cls("obstacle")

    @classmethod
    def logarithmic(cls):
        return cls("logarithmic")

    def affine(self, scale=1.0, lin=0.0):
        """Return ``scale * self + lin * r``."""
        return MonotoneGraph(self.kind, self.coef, self.scale * scale, self.lin * scale + lin)

    @property
    def domain(self):
        """``(lo, hi, lo_closed, hi_closed)`` describing D(beta)."""
        if self.kind == "obstacle":
            return (-1.0, 1.0, True, True)
        if self.kind == "logarithmic":
            return (-1.0, 1.0, False, False)
        return (-math.inf, math.inf, False, False)

    def in_domain(self, r):
        lo, hi, lc, hc = self.domain
        r = np.asarray(r, dtype=float)
        above = r >= lo if lc else r > lo
        below = r <= hi if hc else r < hi
        return above & below

    def in_interior(self, r):
        lo, hi, _, _ = self.domain
        r = np.asarray(r, dtype=float)
        return (r > lo) & (r < hi)

    def contains_domain_of(self, other: "MonotoneGraph") -> bool:
        """True when D(other) is a subset of D(self)."""
        lo, hi, lc, hc = self.domain
        olo, ohi, olc, ohc = other.domain
        lower_ok = olo > lo or (olo == lo and (lc or not olc))
        upper_ok = ohi < hi or (ohi == hi and (hc or not ohc))
        return lower_ok and upper_ok

    def __str__(self):
        base = {
            "linear": f"{self.coef:g}*r",
            "cubic": f"{self.coef:g}*r^3",
            "obstacle": "dI[-1,1]",
            "logarithmic": "ln((1+r)/(1-r))",
        }[self.kind]
        text = base if self.scale == 1 else f"{self.scale:g}*({base})"
        if self.lin:
            text += f" + {self.lin:g}*r"
        return text


@dataclass(frozen=True)
class Perturbation:
    """Lipschitz perturbation ``pi(r) = slope * r`` (``slope = 0`` is the zero map)."""

    slope: float = 0.0

    @classmethod
    def zero(cls):
        return cls(0.0)

    @property
    def lipschitz(self):
        return abs(self.slope)

    def __call__(self, r):
        return _out(self.slope * np.asarray(r, dtype=float), r)

    def derivative(self, r):
        return _out(np.full(np.shape(r), float(self.slope)), r)

    def primitive(self, r):
        """Antiderivative normalized to vanish at 0."""
        r = np.asarray(r, dtype=float)
        return _out(0.5 * self.slope * r * r, r)


@dataclass(frozen=True)
class PotentialPair:
    """Bulk and boundary graph-plus-perturbation data with domination constants."""

    bulk: MonotoneGraph
    boundary: MonotoneGraph
    pi: Perturbation = field(default_factory=Perturbation)
    pi_gamma: Perturbation = field(default_factory=Perturbation)
    rho: float = 1.0
    c0: float = 0.01
    same_growth: bool = False

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ValidationError(problems)

    def violations(self):
        out = []
        if self.rho < 1:
            out.append(f"(A2) domination constant rho={self.rho} must be >= 1")
        if self.c0 <= 0:
            out.append(f"(A2) domination offset c0={self.c0} must be > 0")
        if not self.bulk.contains_domain_of(self.boundary):
            out.append("(A2) D(beta_Gamma) must be contained in D(beta)")
        if self.same_growth and self.bulk.domain != self.boundary.domain:
            out.append("(A2') same growth requires D(beta_Gamma) = D(beta)")
        return out

    @property
    def L(self):
        return self.pi.lipschitz

    @property
    def L_gamma(self):
        return self.pi_gamma.lipschitz


def _out(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def _check_eps(eps):
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")


def _base_value(kind, coef, x):
    if kind == "linear":
        return coef * x
    if kind == "cubic":
        return coef * x**3
    if kind == "logarithmic":
        with np.errstate(divide="ignore"):
            return np.log1p(x) - np.log1p(-x)
    return np.zeros_like(x)


def _base_derivative(kind, coef, x):
    if kind == "linear":
        return np.full_like(x, coef)
    if kind == "cubic":
        return 3.0 * coef * x * x
    if kind == "logarithmic":
        with np.errstate(divide="ignore"):
            return 2.0 / ((1.0 - x) * (1.0 + x))
    return np.zeros_like(x)


def beta_min_section(g: MonotoneGraph, r):
    """Element of minimal modulus of ``g(r)``.

    Raises DomainError if any ``r`` lies outside D(g).
    """
    x = np.asarray(r, dtype=float)
    if not np.all(g.in_domain(x)):
        bad = x[~g.in_domain(x)] if x.ndim else x
        raise DomainError(f"{np.ravel(bad)[0]!r} is outside D({g})")
    if g.kind == "obstacle":
        # the normal cone only adds slopes pointing away from 0
        val = g.lin * x
    else:
        val = g.scale * _base_value(g.kind, g.coef, x) + g.lin * x
    return _out(val, r)


def beta_hat(g: MonotoneGraph, r):
    """Convex primitive with ``beta_hat(0) = 0``; ``+inf`` off the effective domain."""
    x = np.asarray(r, dtype=float)
    quad = 0.5 * g.lin * x * x
    if g.kind == "linear":
        val = 0.5 * g.coef * g.scale * x * x + quad
    elif g.kind == "cubic":
        val = 0.25 * g.coef * g.scale * x**4 + quad
    elif g.kind == "obstacle":
        val = np.where(np.abs(x) <= 1.0, quad, np.inf)
    else:
        inside = np.abs(x) <= 1.0
        xc = np.clip(x, -1.0, 1.0)
        ent = xlogy(1.0 + xc, 1.0 + xc) + xlogy(1.0 - xc, 1.0 - xc)
        val = np.where(inside, g.scale * ent + quad, np.inf)
    return _out(val, r)


def _bracketed_newton(f, df, lo, hi, x0, tol, max_iter, scale):
    """Vectorized safeguarded Newton for increasing ``f`` with ``f(lo) <= 0 <= f(hi)``."""
    # tol is relative to the right-hand side scale so small arguments keep full precision
    x = x0.copy()
    ulp = 4 * np.finfo(float).eps
    for _ in range(max_iter):
        fx = f(x)
        width = hi - lo
        done = (np.abs(fx) <= tol * scale) | (width <= ulp * np.abs(x) + np.finfo(float).tiny)
        if np.all(done):
            return x
        hi = np.where(fx > 0, x, hi)
        lo = np.where(fx < 0, x, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            trial = x - fx / df(x)
        inside = np.isfinite(trial) & (trial > lo) & (trial < hi)
        x = np.where(done, x, np.where(inside, trial, 0.5 * (lo + hi)))
    fx = f(x)
    ok = (np.abs(fx) <= tol * scale) | (hi - lo <= ulp * np.abs(x) + np.finfo(float).tiny)
    if not np.all(ok):
        raise ConvergenceError(
            f"resolvent did not converge in {max_iter} iterations (max |f| = {np.max(np.abs(fx[~ok])):.3e})"
        )
    return x


def resolvent(g: MonotoneGraph, eps, r, tol=ROOT_TOL, max_iter=ROOT_MAX_ITER):
    """``J_eps(r) = (I + eps*g)^{-1}(r)``.

    Closed form for linear and obstacle graphs; safeguarded Newton with a
    bisection fallback for cubic and logarithmic ones.
    """
    _check_eps(eps)
    x = np.asarray(r, dtype=float)
    damp = 1.0 + eps * g.lin
    if g.kind == "linear":
        return _out(x / (damp + eps * g.scale * g.coef), r)
    if g.kind == "obstacle":
        return _out(np.clip(x / damp, -1.0, 1.0), r)

    a = eps * g.scale
    flat = np.atleast_1d(x).astype(float).ravel()

    def f(j):
        return damp * j + a * _base_value(g.kind, g.coef, j) - flat

    def df(j):
        return damp + a * _base_derivative(g.kind, g.coef, j)

    # beta(J) has the sign of J, so J lies between 0 and r / damp
    bound = flat / damp
    if g.kind == "logarithmic":
        bound = np.clip(bound, -1.0, 1.0)
    lo = np.minimum(0.0, bound)
    hi = np.maximum(0.0, bound)
    j = _bracketed_newton(f, df, lo, hi, np.zeros_like(flat), tol, max_iter, np.abs(flat))
    return _out(j.reshape(np.shape(x)), r)


def yosida(g: MonotoneGraph, eps, r):
    """Yosida approximation ``(r - J_eps(r)) / eps``.

    Where ``eps * beta'(J) <= 1`` single-valued graphs use the equivalent
    ``beta(J_eps(r))``: an error in ``J`` is then amplified by ``beta'(J)``
    rather than ``1/eps``.
    """
    x = np.asarray(r, dtype=float)
    j = np.asarray(resolvent(g, eps, x))
    diff = (x - j) / eps
    if g.kind == "obstacle":
        return _out(diff, r)
    with np.errstate(over="ignore", invalid="ignore"):
        direct = g.scale * _base_value(g.kind, g.coef, j) + g.lin * j
        slope = g.scale * _base_derivative(g.kind, g.coef, j) + g.lin
    return _out(np.where(eps * slope <= 1.0, direct, diff), r)


def yosida_derivative(g: MonotoneGraph, eps, r):
    """Derivative of the Yosida approximation (a.e. for the obstacle graph).

    Uses ``beta_eps' = beta'(J) / (1 + eps*beta'(J))``; at the obstacle kink
    the interior branch is taken.
    """
    _check_eps(eps)
    x = np.asarray(r, dtype=float)
    if g.kind == "obstacle":
        damp = 1.0 + eps * g.lin
        inside = np.abs(x / damp) <= 1.0
        val = np.where(inside, g.lin / damp, 1.0 / eps)
        return _out(val, r)
    j = np.asarray(resolvent(g, eps, x))
    dbeta = g.scale * _base_derivative(g.kind, g.coef, j) + g.lin
    with np.errstate(invalid="ignore", over="ignore"):
        val = np.where(np.isfinite(dbeta), dbeta / (1.0 + eps * dbeta), 1.0 / eps)
    return _out(val, r)


def moreau(g: MonotoneGraph, eps, r):
    """Moreau envelope ``beta_hat(J) + (r - J)**2 / (2 eps)``."""
    x = np.asarray(r, dtype=float)
    j = np.asarray(resolvent(g, eps, x))
    return _out(np.asarray(beta_hat(g, j)) + (x - j) ** 2 / (2.0 * eps), r)


def pi_eval(p: Perturbation, r):
    return p(r)


@dataclass
class DominationReport:
    """Outcome of a sampled domination check.

    ``max_violation`` is the largest value of
    ``|beta_eps(r)| - rho |beta_Gamma,eps(r)| - c0`` over the sample (and of
    the reverse inequality when same growth is declared); the check passes
    when it does not exceed ``tol``.
    """

    passed: bool
    max_violation: float
    worst_r: float
    worst_eps: float | None
    section_violation: float
    reverse_violation: float | None
    tol: float
    lines: list = field(default_factory=list)

    def __str__(self):
        return "\n".join(self.lines)


def check_domination(p: PotentialPair, eps_list: Sequence[float], sample_points, tol=1e-10):
    """Check the domination inequality for minimal sections and for every Yosida pair.

    On the minimal sections the check runs over sample points inside
    D(beta_Gamma); for the Yosida approximations it runs over all sample
    points and every ``eps`` in ``eps_list``. If ``p.same_growth`` the
    reverse bound ``|beta_Gamma,eps| / rho - c0 <= |beta_eps|`` is checked too.
    Violations are reported, never raised.
    """
    r = np.asarray(sample_points, dtype=float).ravel()
    worst = (-math.inf, math.nan, None)
    lines = [f"bulk={p.bulk}  boundary={p.boundary}  rho={p.rho:g}  c0={p.c0:g}"]

    inside = r[p.boundary.in_domain(r)]
    section_violation = -math.inf
    if inside.size:
        b = np.abs(beta_min_section(p.bulk, inside))
        bg = np.abs(beta_min_section(p.boundary, inside))
        viol = b - p.rho * bg - p.c0
        k = int(np.argmax(viol))
        section_violation = float(viol[k])
        if section_violation > worst[0]:
            worst = (section_violation, float(inside[k]), None)
        if p.same_growth:
            rv = bg / p.rho - p.c0 - b
            k = int(np.argmax(rv))
            if rv[k] > worst[0]:
                worst = (float(rv[k]), float(inside[k]), None)
            section_violation = max(section_violation, float(rv[k]))
        lines.append(f"minimal sections: max violation {section_violation:+.3e}")

    reverse = None
    for eps in eps_list:
        b = np.abs(np.asarray(yosida(p.bulk, eps, r)))
        bg = np.abs(np.asarray(yosida(p.boundary, eps, r)))
        viol = b - p.rho * bg - p.c0
        k = int(np.argmax(viol))
        if viol[k] > worst[0]:
            worst = (float(viol[k]), float(r[k]), float(eps))
        msg = f"eps={eps:g}: max violation {viol[k]:+.3e} at r={r[k]:+.4g}"
        if p.same_growth:
            rv = bg / p.rho - p.c0 - b
            kr = int(np.argmax(rv))
            reverse = float(rv[kr]) if reverse is None else max(reverse, float(rv[kr]))
            if rv[kr] > worst[0]:
                worst = (float(rv[kr]), float(r[kr]), float(eps))
            msg += f"; reverse {rv[kr]:+.3e}"
        lines.append(msg)

    passed = worst[0] <= tol
    lines.append(
        ("PASS" if passed else "FAIL")
        + f": worst violation {worst[0]:+.3e} at r={worst[1]:+.6g}"
        + ("" if worst[2] is None else f", eps={worst[2]:g}")
    )
    return DominationReport(
        passed=passed,
        max_violation=worst[0],
        worst_r=worst[1],
        worst_eps=worst[2],
        section_violation=section_violation,
        reverse_violation=reverse,
        tol=tol,
        lines=lines,
    )


def check_yosida_contract(g: MonotoneGraph, eps_values, r_values, s_values=None, tol=1e-10):
    """Sampled check of the Yosida/resolvent properties of ``g``.

    For each sample ``(eps, r, s)``: ``J_eps`` is nonexpansive, ``beta_eps``
    is monotone and ``1/eps``-Lipschitz, ``beta_eps(0) = 0``,
    ``|beta_eps(r)| <= |beta_min_section(r)|`` on D(g) and
    ``beta_hat(J_eps r) <= moreau(r) <= beta_hat(r)``. ``s`` defaults to
    ``r`` reversed. Slack is ``tol * max(1, |value|)``. Returns a list of
    violation messages (empty when all hold).
    """
    eps_values = np.asarray(eps_values, dtype=float).ravel()
    r = np.asarray(r_values, dtype=float).ravel()
    s = r[::-1] if s_values is None else np.asarray(s_values, dtype=float).ravel()
    if eps_values.size == 1:
        eps_values = np.full(r.shape, eps_values[0])
    out = []

    def report(name, excess, scale):
        bad = excess > tol * np.maximum(1.0, np.abs(scale))
        if np.any(bad):
            k = int(np.argmax(np.where(bad, excess, -np.inf)))
            out.append(f"{g}: {name} fails at r={r[k]:+.6g}, s={s[k]:+.6g}, eps={eps_values[k]:g} (excess {excess[k]:.3e})")

    jr = np.empty_like(r)
    js = np.empty_like(r)
    br = np.empty_like(r)
    bs = np.empty_like(r)
    mr = np.empty_like(r)
    for eps in np.unique(eps_values):
        m = eps_values == eps
        jr[m] = resolvent(g, eps, r[m])
        js[m] = resolvent(g, eps, s[m])
        br[m] = (r[m] - jr[m]) / eps
        bs[m] = (s[m] - js[m]) / eps
        mr[m] = moreau(g, eps, r[m])
        zero = abs(yosida(g, eps, 0.0))
        if zero > tol:
            out.append(f"{g}: beta_eps(0) = {zero:.3e} != 0 at eps={eps:g}")
    d = np.abs(r - s)
    report("nonexpansive resolvent", np.abs(jr - js) - d, d)
    report("1/eps-Lipschitz", np.abs(br - bs) - d / eps_values, d / eps_values)
    report("monotone", -(br - bs) * (r - s), d)
    inside = g.in_domain(r)
    if np.any(inside):
        sec = np.zeros_like(r)
        sec[inside] = np.abs(beta_min_section(g, r[inside]))
        report("|beta_eps| <= |beta_min_section|", np.where(inside, np.abs(br) - sec, -np.inf), sec)
        hat = np.full_like(r, np.inf)
        hat[inside] = beta_hat(g, r[inside])
        report("moreau <= beta_hat", np.where(inside, mr - hat, -np.inf), np.where(inside, hat, 0.0))
    report("beta_hat(J) <= moreau", np.asarray(beta_hat(g, jr)) - mr, mr)
    return out


def catalog(c1=2.0, c2=1.0):
    """Named admissible potential pairs used by the experiments and ``verify-graphs``.

    ``c1`` and ``c2`` are the nonconvexity constants of the logarithmic and
    double obstacle potentials.
    """
    cubic = MonotoneGraph.cubic(1.0)
    return {
        "regular": PotentialPair(cubic, cubic, Perturbation(-1.0), Perturbation(-1.0), same_growth=True),
        "obstacle": PotentialPair(
            MonotoneGraph.obstacle(),
            MonotoneGraph.obstacle(),
            Perturbation(-2.0 * c2),
            Perturbation(-2.0 * c2),
            same_growth=True,
        ),
        "logarithmic": PotentialPair(
            MonotoneGraph.logarithmic(),
            MonotoneGraph.logarithmic(),
            Perturbation(-2.0 * c1),
            Perturbation(-2.0 * c1),
            same_growth=True,
        ),
        "linear": PotentialPair(
            MonotoneGraph.linear(1.0), MonotoneGraph.linear(1.0), same_growth=True
        ),
        "dominated": PotentialPair(
            cubic, cubic.affine(scale=2.0, lin=1.0), Perturbation(-1.0), Perturbation(-1.0)
        ),
    }
