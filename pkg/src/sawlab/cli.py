"""Command-line entry point: ``sawlab <subcommand> [flags]``.

Every run prints a JSON summary on stdout (and writes it next to ``--out``
as ``<out>.json``). Exit codes: 0 success, 2 precondition violation,
3 budget exhaustion.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from fractions import Fraction

from . import __version__
from .enumeration import BudgetExceeded, InsufficientRange
from .rw_green import QuadratureError

EXIT_OK, EXIT_PRECONDITION, EXIT_BUDGET = 0, 2, 3


def _z(text: str):
    """Parse a fugacity; ``p/q`` stays rational so the exact path can be used."""
    if "/" in text:
        return Fraction(text)
    return float(text)


def _torus(text: str):
    return None if text.lower() == "none" else int(text)


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return _jsonable(obj.item())
    return obj


def config_of(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "threads")}
    return _jsonable(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _emit(args, summary: dict, files: dict[str, str] | None = None) -> None:
    cfg = config_of(args)
    meta = {"tool": "sawlab", "version": __version__, "subcommand": args.cmd, "config": cfg,
            "config_hash": config_hash(cfg)}
    doc = json.dumps(_jsonable({"meta": meta, "summary": summary}), indent=1, sort_keys=True) + "\n"
    sys.stdout.write(doc)
    if args.out:
        header = f"# sawlab {__version__} config_hash={meta['config_hash']}\n"
        for suffix, text in (files or {}).items():
            with open(args.out + suffix, "w") as fh:
                fh.write(header + text)
        with open(args.out + ".json", "w") as fh:
            fh.write(doc)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_rw_green(args) -> int:
    from .lattice import Box, format_value
    from .rw_green import RwParams, green_quadrature_many, green_series_table, verify_rw_bound
    p = RwParams(args.dim, args.mu)
    box = Box.cube(args.dim, args.box)
    pts = list(box.points())
    rows = [",".join([f"x{i + 1}" for i in range(args.dim)] + ["C", "certificate"])]
    summary = {"mu_omega": p.q, "sum_C": (1 / (1 - p.q)) if not p.critical else "inf"}
    if p.critical or args.grid:
        res = green_quadrature_many(p, pts, grid=args.grid or 16,
                                    **({"tol": args.tol} if args.tol else {}))
        vals, cert = res.values, [res.error] * len(pts)
        summary["method"] = "quadrature"
        summary["grids"] = res.grids
    else:
        t = green_series_table(p, box, n_max=args.nmax, **({"tol": args.tol} if args.tol else {}))
        vals = [t[x] for x in pts]
        cert = [float(t.certificate[tuple(c - l for c, l in zip(x, box.lo))]) for x in pts]
        summary["method"] = "series"
        summary["n_max"] = t.n_max
        summary["sum_C_box"] = float(sum(vals))
        summary["max_certificate"] = max(cert)
    for x, v, c in zip(pts, vals, cert):
        rows.append(",".join([str(i) for i in x] + [format_value(float(v)), format_value(float(c))]))
    if args.a1 is not None:
        a0, rep = verify_rw_bound(args.dim, radius=max(args.box, 4), a1=args.a1)
        summary["rw_bound"] = {"a0": a0, "a1": args.a1, "stable": rep.stable}
    _emit(args, summary, {"": "\n".join(rows) + "\n"})
    return EXIT_OK


def cmd_saw_enum(args) -> int:
    from .enumeration import count_saws, estimate_zc, susceptibility, two_point
    from .lattice import format_value
    c = count_saws(args.dim, args.nmax, torus=args.torus, threads=args.threads)
    summary = {"totals": c.totals(), "n_max": c.n_max, "torus": c.torus}
    try:
        zc, err = estimate_zc(c.totals())
        summary["zc_estimate"] = zc
        summary["zc_spread"] = err
    except InsufficientRange:
        pass
    files = {".counts": c.dumps()}
    if args.z is not None:
        ser = two_point(c, args.z)
        chi, tail = susceptibility(ser)
        summary.update({"z": args.z, "chi": float(chi), "tail_bound": float(tail)})
        rows = [",".join([f"x{i + 1}" for i in range(args.dim)] + ["G"])]
        for x in sorted(ser.G.keys()):
            rows.append(",".join([str(i) for i in x] + [format_value(float(ser.G[x]))]))
    else:
        rows = [",".join(["n"] + [f"x{i + 1}" for i in range(args.dim)] + ["count"])]
        for n, table in enumerate(c.tables):
            for x in sorted(table):
                rows.append(",".join([str(n)] + [str(i) for i in x] + [str(table[x])]))
    files[""] = "\n".join(rows) + "\n"
    _emit(args, summary, files)
    return EXIT_OK


def cmd_saw_mc(args) -> int:
    from . import montecarlo as mc
    cfg = mc.RunConfig(args.dim, float(args.z), args.torus, steps=args.steps, burnin=args.burnin,
                       thin=args.thin, seed=args.seed, chains=args.chains, blocks=args.blocks,
                       radius=args.radius)
    h = mc.run_chains(cfg, args.threads)
    chi, chi_err = mc.estimate_chi(h)
    summary = {"chi": chi, "chi_err": chi_err, "samples": h.total, "thin": h.thin,
               "config_hash_run": h.meta["config_hash"], "rng": h.meta["rng"],
               "chains": h.meta["chains"]}
    if args.out:
        h.save(args.out + ".hist")
    _emit(args, summary, {"": mc.dumps_histogram_csv(h)})
    return EXIT_OK


def _load_counts(path):
    from .enumeration import SawCounts
    return SawCounts.load(path)


def cmd_lace(args) -> int:
    from . import lace
    from .enumeration import mass_estimate, two_point
    counts = _load_counts(args.from_counts)
    sk = lace.invert_series(counts)
    zs = args.z
    kernels = [sk.at(z) for z in zs]
    summary: dict = {"order": sk.n_max, "kernels": []}
    masses = []
    for z, K in zip(zs, kernels):
        pi = lace.recover_pi(K)
        try:
            m = mass_estimate(two_point(counts, float(z)), range(1, max(2, min(counts.n_max, 6))))
        except InsufficientRange:
            m = float("nan")
        masses.append(m)
        c, wit = lace.massive_infrared_check(K, args.m * m if math.isfinite(m) else 0.0, args.grid)
        summary["kernels"].append({
            "z": z, "F0": float(K.F[(0,) * counts.d]), "sanity": K.sanity(),
            "pi_moment_a2": lace.pi_moment_sum(pi, 2.0) if len(pi) else 0.0,
            "mass": m, "massive_infrared_min": c, "witness": wit, **K.meta})
    if args.check_assumption:
        rep = lace.check_assumption(kernels, masses, grid=args.grid)
        summary.update(rep.to_json())
    _emit(args, summary)
    return EXIT_OK


def cmd_decomp(args) -> int:
    from . import decomposition as dc
    from . import lace
    from .enumeration import mass_estimate, two_point
    counts = _load_counts(args.from_counts)
    K = lace.invert_series(counts).at(args.z)
    lam, mu = dc.match_lambda_mu(K)
    E = dc.build_E(K, lam, mu)
    ser = two_point(counts, args.z)
    rem = dc.remainder_f(ser, lam, mu, E, args.box, residual_F=K.meta["residual_bound"])
    try:
        m_hat = mass_estimate(ser, range(1, max(2, min(counts.n_max, 6))))
    except InsufficientRange:
        m_hat = 0.0
    m = args.m if args.m is not None else args.sigma * m_hat
    sup, trend = dc.check_f_decay(rem.f_sub, m, counts.d,
                                  [max(1, args.box // 2), args.box])
    summary = {"lambda": lam, "mu": mu, "mu_omega": float(mu) * 2 * counts.d,
               "sum_E": E.total(), "sum_x2_E": dc.exact_moment(E, 2), "m": m, "m_hat": m_hat,
               "remainder": {"discrepancy": rem.discrepancy, "certificate": rem.certificate,
                             "flagged": rem.flagged, **rem.meta},
               "decay": {"sup": sup, "radii": trend.radii, "sups": trend.sups,
                         "drift": trend.drift}}
    _emit(args, summary)
    return EXIT_OK


def cmd_plateau(args) -> int:
    from .torus import emit_plot_data, plateau_report
    mc_cfg = None
    if args.source == "mc":
        mc_cfg = {"steps": args.steps, "burnin": args.burnin, "seed": args.seed,
                  "chains": args.chains, "radius": max(args.r // 2 + 1, 1)}
    rep = plateau_report(args.dim, args.r, args.z_grid, source=args.source, n_max=args.nmax,
                         mc_config=mc_cfg, threads=args.threads)
    _emit(args, rep.to_json(), {".csv": rep.dumps_csv(), ".plot.csv": emit_plot_data(rep)})
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Fast identities that need no external data."""
    from fractions import Fraction as Fr
    from . import decomposition as dc, lace
    from .enumeration import count_saws, two_point
    from .lattice import delta
    from .rw_green import RwParams, green_series, m0_of_mu
    checks = {}
    checks["totals_d2"] = count_saws(2, 4).totals()[1:] == [4, 12, 36, 100]
    checks["m0_critical"] = m0_of_mu(RwParams(3, 1 / 6)) == 0.0
    # mass outside radius 30 needs at least 31 steps: below 0.6^31 / 0.4
    C, tail = green_series(RwParams(3, 0.1), 30)
    checks["rw_sum"] = abs(C.total() - 2.5) < 1e-6
    K = lace.rw_kernel_table(3, Fr(1, 10))
    checks["rw_fixed_point"] = dc.match_lambda_mu(K) == (1, Fr(1, 10))
    checks["z0_kernel"] = lace.invert_series(count_saws(2, 3)).at(0).F == delta(2)
    checks["d1_two_point"] = two_point(count_saws(1, 6), Fr(1, 3)).G[(4,)] == Fr(1, 81)
    ok = all(checks.values())
    _emit(args, {"checks": checks, "passed": ok})
    return EXIT_OK if ok else 1


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sawlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sawlab {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--out", default=None, help="output path stem")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: SAWLAB_THREADS or CPU count)")
        return p

    p = add("rw-green", cmd_rw_green, "random-walk Green function on a box")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--box", type=int, default=3)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--grid", type=int, default=None, help="use quadrature with this starting grid")
    p.add_argument("--tol", type=float, default=None,
                   help="target accuracy (default 1e-12 series, 1e-10 quadrature)")
    p.add_argument("--a1", type=float, default=None, help="also fit the decay bound with this rate")

    p = add("saw-enum", cmd_saw_enum, "exact self-avoiding walk counts")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--nmax", type=int, required=True)
    p.add_argument("--torus", type=_torus, default=None)
    p.add_argument("--z", type=_z, default=None)

    p = add("saw-mc", cmd_saw_mc, "Berretti-Sokal Monte Carlo")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--torus", type=_torus, default=None)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--steps", type=int, default=10 ** 6)
    p.add_argument("--burnin", type=int, default=10 ** 6)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--blocks", type=int, default=16)
    p.add_argument("--radius", type=int, default=8, help="recorded box radius on Z^d")

    p = add("lace", cmd_lace, "recover F and Pi from enumerated counts")
    p.add_argument("--from-counts", required=True)
    p.add_argument("--z", type=_z, nargs="+", required=True)
    p.add_argument("--m", type=float, default=0.0, help="tilt as a fraction of the fitted mass")
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--check-assumption", action="store_true")

    p = add("decomp", cmd_decomp, "moment-matched decomposition G = lambda C + f")
    p.add_argument("--from-counts", required=True)
    p.add_argument("--z", type=_z, required=True)
    p.add_argument("--m", type=float, default=None, help="absolute tilt (default sigma * mass)")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--box", type=int, default=3)

    p = add("plateau", cmd_plateau, "torus versus Z^d comparison")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--z-grid", type=float, nargs="+", required=True)
    p.add_argument("--nmax", type=int, default=None)
    p.add_argument("--source", choices=("enum", "mc"), default="enum")
    p.add_argument("--steps", type=int, default=10 ** 6)
    p.add_argument("--burnin", type=int, default=10 ** 5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)

    add("selftest", cmd_selftest, "run quick built-in identities")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.threads is not None:
        os.environ["SAWLAB_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (BudgetExceeded, QuadratureError) as e:
        print(f"budget exhausted: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValueError, InsufficientRange, ArithmeticError) as e:
        print(f"precondition violated: {e}", file=sys.stderr)
        return EXIT_PRECONDITION


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
