"""TOML run configuration: parsing, defaults and validation.

A minimal file needs only ``[grid]`` and a potential choice; everything else
has a default. Example::

    [grid]
    nx = 32
    ny = 32

    [physics]
    tau = 1.0
    kappa = 0.5
    eps = 0.1

    [potentials]
    preset = "regular"           # or spell out bulk/boundary below
    # bulk.kind = "cubic"
    # bulk.params = { coef = 1.0 }
    # pi.slope = -1.0
    # boundary.kind = "cubic"
    # pi_gamma.slope = -1.0
    # same_growth = true

    [data]
    u0.kind = "random-smooth"    # constant | fourier | random-smooth | file
    u0.amplitude = 0.2
    u0.seed = 7
    g = 0.0

    [time]
    dt = 0.01
    t_end = 0.5

    [solver]
    splitting = "implicit-convex"

    [output]
    directory = "out"
    snapshot_every = 10

Every problem found is reported at once through :class:`ParseError` (the file
cannot be read as TOML or has the wrong shape) or :class:`ValidationError`
(values break the model assumptions).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import geometry as geo
from .errors import ParseError, ValidationError
from .experiments import fourier_mode, mean_free_noise, smooth_random_field
from .geometry import SlabGrid
from .graphs import KINDS, MonotoneGraph, Perturbation, PotentialPair, catalog
from .stepper import RunConfig, parameter_violations

__all__ = ["Config", "DEFAULTS", "parse_config", "load_config", "build_potentials"]

DEFAULTS = {
    "grid": {"nx": 32, "ny": 32, "Lx": 1.0, "Ly": 1.0},
    "physics": {"tau": 1.0, "kappa": 1.0, "eps": 0.1},
    "potentials": {
        "preset": None,
        "c1": 2.0,
        "c2": 1.0,
        "bulk": {"kind": "cubic", "params": {}},
        "boundary": None,
        "pi": {"slope": 0.0},
        "pi_gamma": None,
        "rho": 1.0,
        "c0": 0.01,
        "same_growth": False,
    },
    "data": {"u0": {"kind": "constant", "value": 0.0}, "g": 0.0, "g_gamma": 0.0},
    "time": {"dt": 0.01, "t_end": 0.1},
    "solver": {
        "newton_tol": 1e-9,
        "newton_max_iter": 30,
        "linear_tol": 1e-12,
        "splitting": "implicit-convex",
    },
    "output": {"directory": "out", "snapshot_every": 0},
    "sweep": {
        "kappas": [1.0, 0.5, 0.25, 0.125, 0.0625],
        "epsilons": [1e-1, 1e-2, 1e-3, 1e-4],
        "magnitudes": [1e-1, 1e-2, 1e-3],
        "kind": "u0",
        "seed": 0,
    },
}

_GRAPH_PARAMS = {"coef", "scale", "lin"}
# tables replaced wholesale rather than merged key by key
_OPAQUE = {"params", "u0", "bulk", "boundary"}
_FIELD_KINDS = ("constant", "fourier", "random-smooth", "file")


@dataclass
class Config:
    """A validated configuration.

    ``resolved`` is the input merged with defaults, suitable for echoing.
    """

    run: RunConfig
    output_dir: Path
    snapshot_every: int
    sweep: dict
    resolved: dict
    source: Path | None = None
    warnings: list = field(default_factory=list)


def _merge(defaults, given, path, problems):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            problems.append(f"unknown key [{where}]")
            continue
        if isinstance(defaults[key], dict) and key not in _OPAQUE:
            if not isinstance(value, dict):
                problems.append(f"[{where}] must be a table")
                continue
            out[key] = _merge(defaults[key], value, where, problems)
        else:
            out[key] = value
    return out


def _number(d, key, where, problems, integer=False):
    v = d.get(key)
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        kind = "an integer" if integer else "a number"
        problems.append(f"[{where}] {key} must be {kind}, got {v!r}")
        return None
    return int(v) if integer else float(v)


def _graph(entry, where, problems):
    if not isinstance(entry, dict):
        problems.append(f"[{where}] must be a table with a 'kind'")
        return None
    kind = entry.get("kind")
    if kind not in KINDS:
        problems.append(f"(A1) [{where}] kind {kind!r} not one of {KINDS}")
        return None
    params = entry.get("params", {}) or {}
    extra = set(entry) - {"kind", "params"}
    if extra:
        problems.append(f"unknown key(s) {sorted(extra)} in [{where}]")
    bad = set(params) - _GRAPH_PARAMS
    if bad:
        problems.append(f"[{where}.params] unknown parameter(s) {sorted(bad)}")
        return None
    try:
        return MonotoneGraph(kind, **{k: float(v) for k, v in params.items()})
    except (TypeError, ValueError) as exc:
        problems.append(f"(A1) [{where}] {exc}")
        return None


def _perturbation(entry, where, problems):
    if not isinstance(entry, dict) or set(entry) - {"slope"}:
        problems.append(f"[{where}] must be a table with only 'slope'")
        return None
    slope = _number(entry, "slope", where, problems)
    return None if slope is None else Perturbation(slope)


def build_potentials(pot: dict, problems: list):
    """Potential pair from the ``[potentials]`` table; appends problems instead of raising."""
    preset = pot.get("preset")
    if preset is not None:
        cat = catalog(c1=float(pot["c1"]), c2=float(pot["c2"]))
        if preset not in cat:
            problems.append(f"[potentials] preset {preset!r} not one of {sorted(cat)}")
            return None
        return cat[preset]
    bulk = _graph(pot["bulk"], "potentials.bulk", problems)
    boundary = _graph(pot["boundary"] if pot["boundary"] is not None else pot["bulk"], "potentials.boundary", problems)
    pi = _perturbation(pot["pi"], "potentials.pi", problems)
    pi_g = _perturbation(pot["pi_gamma"] if pot["pi_gamma"] is not None else pot["pi"], "potentials.pi_gamma", problems)
    rho = _number(pot, "rho", "potentials", problems)
    c0 = _number(pot, "c0", "potentials", problems)
    if not isinstance(pot["same_growth"], bool):
        problems.append("[potentials] same_growth must be true or false")
        return None
    if None in (bulk, boundary, pi, pi_g, rho, c0):
        return None
    try:
        return PotentialPair(bulk, boundary, pi, pi_g, rho=rho, c0=c0, same_growth=pot["same_growth"])
    except ValidationError as exc:
        problems.extend(exc.violations)
        return None


def _bulk_field(entry, grid, where, problems, base_dir, mean_free=False):
    """Constant, Fourier mode, seeded smooth noise or ``.field`` file."""
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return float(entry)
    if not isinstance(entry, dict):
        problems.append(f"[{where}] must be a number or a table with 'kind'")
        return None
    kind = entry.get("kind", "constant")
    opts = {k: v for k, v in entry.items() if k != "kind"}
    try:
        if kind == "constant":
            return float(opts.get("value", 0.0))
        if kind == "fourier":
            allowed = {"amplitude", "kx", "ky", "mean"}
            _unknown(opts, allowed, where, problems)
            return fourier_mode(grid, **{k: opts[k] for k in allowed & set(opts)})
        if kind == "random-smooth":
            allowed = {"seed", "amplitude", "mean", "kmax"}
            _unknown(opts, allowed, where, problems)
            kw = {k: opts[k] for k in allowed & set(opts)}
            if mean_free:
                kw.pop("mean", None)
                kw.pop("kmax", None)
                return mean_free_noise(grid, **kw)
            return smooth_random_field(grid, **kw)
        if kind == "file":
            path = Path(opts.get("path", ""))
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            fgrid, z, _ = geo.read_field(path)
            if fgrid.shape != grid.shape:
                problems.append(f"[{where}] {path} has shape {fgrid.shape}, grid is {grid.shape}")
                return None
            return z
    except (TypeError, ValueError) as exc:
        problems.append(f"[{where}] {exc}")
        return None
    problems.append(f"[{where}] kind {kind!r} not one of {_FIELD_KINDS}")
    return None


def _boundary_field(entry, grid, where, problems):
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return float(entry)
    if isinstance(entry, dict):
        kind = entry.get("kind", "constant")
        if kind == "constant":
            return float(entry.get("value", 0.0))
        if kind == "fourier":
            amp = float(entry.get("amplitude", 0.0))
            kx = int(entry.get("kx", 1))
            row = amp * np.cos(2 * np.pi * kx * grid.x / grid.Lx)
            return np.stack([row, row])
    problems.append(f"[{where}] must be a number or a constant/fourier table")
    return None


def _unknown(opts, allowed, where, problems):
    extra = set(opts) - allowed
    if extra:
        problems.append(f"[{where}] unknown option(s) {sorted(extra)}")


def parse_config(path) -> Config:
    """Read, merge with :data:`DEFAULTS` and validate a TOML configuration.

    Raises
    ------
    ParseError
        The file is not valid TOML or has unknown keys or wrong types.
    ValidationError
        A parameter breaks a model assumption; ``violations`` lists them all.
    OSError
        The file (or a referenced ``.field`` file) cannot be read.
    """
    path = Path(path)
    text = path.read_text()
    return load_config(text, base_dir=path.parent, source=path)


def load_config(text: str, base_dir=None, source=None) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{source or '<string>'}: {exc}") from exc
    shape_problems: list = []
    cfg = _merge(DEFAULTS, raw, "", shape_problems)
    nums = {}
    for sec, keys, integer in (
        ("grid", ("nx", "ny"), True),
        ("grid", ("Lx", "Ly"), False),
        ("physics", ("tau", "kappa", "eps"), False),
        ("time", ("dt", "t_end"), False),
        ("solver", ("newton_tol", "linear_tol"), False),
        ("solver", ("newton_max_iter",), True),
        ("output", ("snapshot_every",), True),
    ):
        for k in keys:
            nums[k] = _number(cfg[sec], k, sec, shape_problems, integer=integer)
    if shape_problems:
        raise ParseError("; ".join(shape_problems))

    problems: list = []
    try:
        grid = SlabGrid(nums["nx"], nums["ny"], nums["Lx"], nums["Ly"])
    except ValueError as exc:
        raise ValidationError([f"[grid] {exc}"]) from exc
    problems += parameter_violations(
        nums["tau"], nums["kappa"], nums["eps"], nums["dt"], nums["t_end"], cfg["solver"]["splitting"]
    )
    if nums["newton_tol"] <= 0 or nums["linear_tol"] <= 0 or nums["newton_max_iter"] < 1:
        problems.append("[solver] tolerances must be positive and newton_max_iter >= 1")
    if nums["snapshot_every"] < 0:
        problems.append("[output] snapshot_every must be >= 0")
    pot = build_potentials(cfg["potentials"], problems)
    u0 = _bulk_field(cfg["data"]["u0"], grid, "data.u0", problems, base_dir)
    g = _bulk_field(cfg["data"]["g"], grid, "data.g", problems, base_dir, mean_free=True)
    gg = _boundary_field(cfg["data"]["g_gamma"], grid, "data.g_gamma", problems)

    run = None
    if pot is not None and u0 is not None and g is not None and gg is not None:
        run = RunConfig(
            grid=grid,
            potentials=pot,
            u0=u0,
            tau=nums["tau"],
            kappa=nums["kappa"],
            eps=nums["eps"],
            dt=nums["dt"],
            t_end=nums["t_end"],
            g=g,
            g_gamma=gg,
            splitting=cfg["solver"]["splitting"],
            newton_tol=nums["newton_tol"],
            newton_max_iter=nums["newton_max_iter"],
            linear_tol=nums["linear_tol"],
        )
        seen = set(problems)
        problems += [p for p in run.violations() if p not in seen]
    if problems:
        raise ValidationError(problems)

    sweep = cfg["sweep"]
    out_dir = Path(cfg["output"]["directory"])
    if not out_dir.is_absolute() and base_dir is not None:
        out_dir = Path(base_dir) / out_dir
    cfg["resolved_potentials"] = _describe(run.potentials)
    return Config(run, out_dir, nums["snapshot_every"], sweep, cfg, source)


def _describe(p: PotentialPair):
    return {
        "bulk": str(p.bulk),
        "boundary": str(p.boundary),
        "pi_slope": p.pi.slope,
        "pi_gamma_slope": p.pi_gamma.slope,
        "rho": p.rho,
        "c0": p.c0,
        "same_growth": p.same_growth,
    }


def expected_rows(run: RunConfig):
    """Rows of a diagnostics CSV: one per time level including ``t = 0``."""
    return run.n_steps + 1

