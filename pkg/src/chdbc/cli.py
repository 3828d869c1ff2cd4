"""Command-line entry point.

Subcommands: ``run``, ``sweep-kappa``, ``sweep-epsilon``, ``contdep``,
``manufactured``, ``verify-graphs`` and ``plot``. Exit codes: 0 success,
1 configuration error, 2 solver failure, 3 acceptance failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import (
    ConvergenceError,
    MeanError,
    NewtonDivergence,
    ParseError,
    SolverError,
    ValidationError,
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCEPT, EXIT_IO = 0, 1, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _load(args):
    from .config import parse_config

    cfg = parse_config(args.config)
    if getattr(args, "out", None):
        cfg.output_dir = Path(args.out)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _fmt(v):
    return "%.12e" % v


def cmd_run(args):
    from .diagnostics import write_csv
    from .stepper import run

    cfg = _load(args)
    out = cfg.output_dir
    print(json.dumps(_jsonable(cfg.resolved), indent=2, sort_keys=True))
    every = cfg.snapshot_every

    def snapshot(k, state, prev, stats):
        if every and k % every == 0:
            geo.write_field(out / f"u_{k:06d}.field", cfg.run.grid, state.u, state.t)

    traj = run(cfg.run, callbacks=[snapshot])
    write_csv(out / "diagnostics.csv", traj.records)
    geo.write_field(out / "u_final.field", cfg.run.grid, traj.final.u, traj.final.t)
    geo.write_field(out / "mu_final.field", cfg.run.grid, traj.final.mu, traj.final.t)
    (out / "config.resolved.json").write_text(json.dumps(_jsonable(cfg.resolved), indent=2, sort_keys=True) + "\n")
    first, last = traj.records[0], traj.records[-1]
    print(f"steps {len(traj.stats)}  mass {first.mass:.12e} -> {last.mass:.12e}  energy {first.energy:.6e} -> {last.energy:.6e}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_sweep(out, result, prefix):
    from .diagnostics import write_csv
    from .experiments import write_summary_csv

    for p, tr in zip(result.params, result.traces):
        write_csv(out / f"{prefix}_{p:.6g}.csv", tr.records)
    if result.reference is not None:
        write_csv(out / f"{prefix}_ref.csv", result.reference.records)
    write_summary_csv(out / f"summary_{prefix}.csv", result)


def _report_sweep(result, column):
    for j, p in enumerate(result.params):
        print(f"{result.name}={p:<10.6g} {column}={getattr(result, column)[j]:.6e}  viol={result.obstacle_violation[j]:.3e}")
    print(f"rate_fit {result.rate_fit:.4f}")
    print("PASS" if result.passed else "FAIL: " + "; ".join(result.reasons))
    return EXIT_OK if result.passed else EXIT_ACCEPT


def cmd_sweep_kappa(args):
    from .experiments import kappa_sweep

    cfg = _load(args)
    kappas = args.kappas or cfg.sweep["kappas"]
    result = kappa_sweep(cfg.run, kappas, threads=args.threads)
    _write_sweep(cfg.output_dir, result, "kappa")
    return _report_sweep(result, "d_to_ref")


def cmd_sweep_epsilon(args):
    from .experiments import epsilon_sweep

    cfg = _load(args)
    eps = args.epsilons or cfg.sweep["epsilons"]
    result = epsilon_sweep(cfg.run, eps, threads=args.threads)
    _write_sweep(cfg.output_dir, result, "eps")
    return _report_sweep(result, "d_pairwise")


def cmd_contdep(args):
    from .experiments import contdep_sweep

    cfg = _load(args)
    mags = args.magnitudes or cfg.sweep["magnitudes"]
    kind = args.kind or cfg.sweep["kind"]
    res = contdep_sweep(cfg.run, kind=kind, magnitudes=mags, seed=cfg.sweep["seed"], c_cap=args.c_cap)
    path = cfg.output_dir / f"contdep_{kind}.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["magnitude", "lhs", "rhs", "ratio"])
        for a, r in zip(res.magnitudes, res.results):
            wr.writerow([_fmt(a), _fmt(r.lhs), _fmt(r.rhs), _fmt(r.ratio)])
    for a, r in zip(res.magnitudes, res.results):
        print(f"a={a:<8.3g} lhs={r.lhs:.6e} rhs={r.rhs:.6e} ratio={r.ratio:.6e}")
    print(f"spread {res.spread:.4f}  cap {res.c_cap:g}")
    print("PASS" if res.passed else "FAIL")
    return EXIT_OK if res.passed else EXIT_ACCEPT


def cmd_manufactured(args):
    from .experiments import manufactured_convergence, write_manufactured_csv

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = manufactured_convergence()
    write_manufactured_csv(out / "manufactured.csv", rep)
    for h, dt, eh, ev in rep.rows():
        print(f"h={h:.5f} dt={dt:.2e} err_H={eh:.6e} err_V={ev:.6e}")
    ok = abs(rep.order_space - 2.0) <= 0.3 and abs(rep.order_time - 1.0) <= 0.3
    print(f"order_space {rep.order_space:.3f}  order_time {rep.order_time:.3f}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_ACCEPT


def cmd_verify_graphs(args):
    from .config import DEFAULTS, build_potentials, tomllib
    from .graphs import check_domination, check_yosida_contract

    raw = tomllib.loads(Path(args.config).read_text())
    pot_table = dict(DEFAULTS["potentials"])
    pot_table.update(raw.get("potentials", {}))
    problems: list = []
    pair = build_potentials(pot_table, problems)
    if pair is None:
        raise ValidationError(problems)
    eps_list = (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
    rng = np.random.default_rng(args.seed)
    grid_pts = np.linspace(-2.0, 2.0, 401)
    rep = check_domination(pair, eps_list, grid_pts)
    print(rep)
    failures = []
    for name, g in (("bulk", pair.bulk), ("boundary", pair.boundary)):
        r = rng.uniform(-3.0, 3.0, args.samples)
        s = rng.uniform(-3.0, 3.0, args.samples)
        e = 10.0 ** rng.uniform(-4.0, 0.0, args.samples)
        v = check_yosida_contract(g, e, r, s)
        print(f"{name} Yosida contract: {'PASS' if not v else 'FAIL'}")
        failures += v
    for line in failures:
        print("  " + line)
    ok = rep.passed and not failures
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_ACCEPT


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(args.csv)
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise OSError(f"{src}: no data rows")
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    cols = rows[0].keys()
    fig, ax = plt.subplots(figsize=(6, 4))
    if "param" in cols:
        p = np.array([float(r["param"]) for r in rows])
        for c in ("d_to_ref", "d_pairwise"):
            v = np.array([float(r[c]) for r in rows])
            ok = np.isfinite(v) & (v > 0)
            if np.any(ok):
                ax.loglog(p[ok], v[ok], "o-", label=c)
        ax.set_xlabel("parameter")
        ax.set_ylabel("difference")
    elif "energy" in cols:
        t = [float(r["t"]) for r in rows]
        ax.plot(t, [float(r["energy"]) for r in rows], label="energy")
        ax.set_xlabel("t")
        ax.set_ylabel("free energy")
    elif "err_H" in cols:
        h = [float(r["h"]) for r in rows]
        ax.loglog(h, [float(r["err_H"]) for r in rows], "o", label="err_H")
        ax.set_xlabel("h")
    else:
        raise OSError(f"{src}: unrecognized CSV layout")
    ax.legend()
    fig.tight_layout()
    target = out / (src.stem + ".png")
    fig.savefig(target, dpi=120)
    plt.close(fig)
    print(target)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="chdbc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--out", help="output directory (overrides [output] directory)")
        p.set_defaults(func=func)
        return p

    with_config("run", cmd_run, "integrate one trajectory")
    p = with_config("sweep-kappa", cmd_sweep_kappa, "surface-diffusion sweep against kappa = 0")
    p.add_argument("--kappas", type=_floats)
    p.add_argument("--threads", type=int, default=1)
    p = with_config("sweep-epsilon", cmd_sweep_epsilon, "Yosida-parameter sweep")
    p.add_argument("--epsilons", type=_floats)
    p.add_argument("--threads", type=int, default=1)
    p = with_config("contdep", cmd_contdep, "continuous dependence on data")
    p.add_argument("--kind", choices=("u0", "g"))
    p.add_argument("--magnitudes", type=_floats)
    p.add_argument("--c-cap", type=float, default=1e3, dest="c_cap")
    p = sub.add_parser("manufactured", help="order-of-accuracy study")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_manufactured)
    p = sub.add_parser("verify-graphs", help="domination and Yosida property checks")
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_graphs)
    p = sub.add_parser("plot", help="line chart of a diagnostics, summary or manufactured CSV")
    p.add_argument("csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, MeanError) as exc:
        violations = getattr(exc, "violations", None)
        if violations:
            print("configuration error:", file=sys.stderr)
            for v in violations:
                print(f"  - {v}", file=sys.stderr)
        else:
            print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonDivergence, SolverError, ConvergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
