"""Command-line interface.

Every subcommand writes JSON (reports) or CSV (tables) to stdout, or to
``--out``.  Exit codes: 0 ok, 2 validation failure, 3 numerical assertion
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from .config import ConfigError, RunConfig, load_config, load_group_file
from .congruence import collision_scan, congruence_context
from .cover import build_cover, hs_report
from .moebius import example_group, validate_schottky
from .pipeline import OrbitCache, _clean, csv_text, exit_code, export, run_pipeline
from .pressure import bowen_dimension, pressure_table
from .resonances import Rectangle, TestFunction, counting_probe, find_resonances, run_trace_formula
from .transfer import ZetaFunction, fredholm_det, zeta_cycle

OK, INVALID, NUMERICAL = 0, 2, 3


def _complex(text: str) -> complex:
    parts = [float(x) for x in text.split(",")]
    if len(parts) == 1:
        return complex(parts[0], 0.0)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected RE,IM, got {text!r}")
    return complex(*parts)


def _floats(n: int):
    def parse(text: str) -> list[float]:
        vals = [float(x) for x in text.split(",")]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals

    return parse


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _json(args, obj) -> None:
    _emit(args, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def _group(args):
    return example_group() if args.group in (None, "example") else load_group_file(args.group)


def _table(args, g, qs=()):
    return OrbitCache(args.cache_dir or RunConfig().cache_path()).table(g, args.n_max, qs)


# ------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    g = _group(args)
    rep = validate_schottky(g)
    _json(args, {"ok": rep.ok, "messages": rep.messages, "min_gap": rep.min_gap, "max_circle_error": rep.max_circle_error})
    return OK if rep.ok else INVALID


def cmd_dimension(args) -> int:
    d = bowen_dimension(_table(args, _group(args)))
    _json(args, {"delta": d.delta, "bracket": d.bracket, "n_max": d.n_max})
    return OK


def cmd_pressure(args) -> int:
    t = _table(args, _group(args))
    xs = np.linspace(args.x_min, args.x_max, args.steps)
    rows = [[float(x), pressure_table(t, float(x)).extrapolated] for x in xs]
    _emit(args, csv_text(["x", "P"], rows))
    return OK


def cmd_girth(args) -> int:
    g = _group(args)
    ctx = congruence_context(g, args.q)
    eps1 = ctx.epsilon1
    depth = args.depth if args.depth else min(8, math.ceil(eps1 * math.log(args.q)) + 4)
    rep = collision_scan(g, ctx, depth)
    _json(args, rep.to_dict())
    return OK if rep.collisions_below_threshold == 0 and rep.certificates_ok else NUMERICAL


def cmd_cover(args) -> int:
    c = build_cover(_group(args), args.h, depth=args.depth)
    _json(args, c.to_dict())
    return OK


def cmd_zeta(args) -> int:
    g = _group(args)
    if args.grid:
        a, b, c, d = args.grid
        Z = ZetaFunction(g, args.q, args.order)
        rows = []
        for re in np.linspace(a, b, args.nx):
            for im in np.linspace(c, d, args.ny):
                v = Z.logdet(complex(re, im))
                rows.append([float(re), float(im), v.real, v.imag])
        _emit(args, csv_text(["re", "im", "log_abs_det", "arg_det"], rows))
        return OK
    s = args.s
    dv = fredholm_det(g, args.q, s, args.order, tail=args.tail)
    cyc = zeta_cycle(g, args.q, s, args.n_max, _table(args, g, (args.q,)))
    rel = abs(dv.value - cyc.value) / abs(dv.value) if dv.value != 0 else None
    _json(
        args,
        {
            "det_re": dv.value.real,
            "det_im": dv.value.imag,
            "tail": dv.tail,
            "route2_rel_err": rel,
            "route2_last_term": cyc.last_term,
            "route2_diverging": cyc.diverging,
        },
    )
    return OK


def cmd_hs(args) -> int:
    g = _group(args)
    cover = build_cover(g, args.h)
    rep = hs_report(g, args.q, cover, args.s, args.n, M=args.order)
    _json(args, rep.to_dict())
    return OK if rep.log_abs_det2 <= rep.bound + 1e-9 else NUMERICAL


def cmd_resonances(args) -> int:
    Z = ZetaFunction(_group(args), args.q, args.order)
    rs = find_resonances(Z, Rectangle(*args.rect), tol=args.tol, step=args.step)
    rows = [[z.s.real, z.s.imag, z.multiplicity, z.residual] for z in sorted(rs.zeros, key=lambda z: (z.s.real, z.s.imag))]
    _emit(args, csv_text(["re", "im", "multiplicity", "residual"], rows))
    return OK


def cmd_count(args) -> int:
    Z = ZetaFunction(_group(args), args.q, args.order)
    r_grid = np.round(np.linspace(args.rmax / args.points, args.rmax, args.points), 12) + 1e-3
    rep = counting_probe(Z, r_grid, step=args.step)
    _emit(args, csv_text(["r", "N_q"], [[r, n] for r, n in zip(rep.r, rep.N)]))
    return OK if rep.monotone else NUMERICAL


def cmd_trace_check(args) -> int:
    g = _group(args)
    t = _table(args, g, (args.q,))
    a, b = args.support or (t.min_length - 0.5, t.min_length + 1.5)
    rep, _ = run_trace_formula(
        ZetaFunction(g, args.q, args.order), TestFunction(a, b), t, sigma_floor=args.floor, T_max=args.T_max
    )
    _json(args, rep.to_dict())
    return OK if rep.status == "pass" else NUMERICAL


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config)
    env = run_pipeline(cfg, args.stages.split(",") if args.stages else None)
    out = args.out_dir or cfg.resolve(cfg.output_dir)
    for p in export(env, out):
        print(p)
    if not env.ok:
        print(f"stage {env.failed_stage} failed: {env.error}", file=sys.stderr)
    return exit_code(env)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="schottky-zeta", description="Congruence Selberg zeta functions of Schottky groups.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--group", default="example", help="group JSON file (default: built-in example)")
        p.add_argument("--out", help="write to this file instead of stdout")
        p.add_argument("--cache-dir", help="orbit-table cache directory")
        p.add_argument("--n-max", type=int, default=8, help="orbit table depth")
        p.set_defaults(func=func)
        return p

    add("validate", cmd_validate, "check the Schottky disc configuration")
    add("dimension", cmd_dimension, "Hausdorff dimension of the limit set")
    p = add("pressure", cmd_pressure, "pressure curve as CSV")
    p.add_argument("--x-min", type=float, default=0.0)
    p.add_argument("--x-max", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=21)
    p = add("girth", cmd_girth, "exhaustive congruent-word collision scan")
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--depth", type=int)
    p = add("cover", cmd_cover, "cover of the limit set at scale h")
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--depth", type=int)
    p = add("zeta", cmd_zeta, "det(I - L_s) at a point, or a CSV grid")
    p.add_argument("--s", type=_complex, default=complex(0.5))
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--order", type=int, default=12, help="basis order M")
    p.add_argument("--tail", action="store_true", help="singular-value tail estimate (slow for large q)")
    p.add_argument("--grid", type=_floats(4), help="RE_MIN,RE_MAX,IM_MIN,IM_MAX")
    p.add_argument("--nx", type=int, default=11)
    p.add_argument("--ny", type=int, default=11)
    p = add("hs", cmd_hs, "Hilbert-Schmidt report of L_s^n at scale h")
    p.add_argument("--s", type=_complex, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--order", type=int, default=10)
    p = add("resonances", cmd_resonances, "zeros of the zeta function in a rectangle")
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--rect", type=_floats(4), required=True, help="SIGMA_MIN,SIGMA_MAX,T_MIN,T_MAX")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--order", type=int, default=12)
    p = add("count", cmd_count, "N_q(r) by winding numbers on circles")
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--rmax", type=float, required=True)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--order", type=int, default=10)
    p = add("trace-check", cmd_trace_check, "wave-trace formula with a bump test function")
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--support", type=_floats(2))
    p.add_argument("--floor", type=float, default=-1.2)
    p.add_argument("--T-max", type=float, default=100.0)
    p.add_argument("--order", type=int, default=12)
    p = sub.add_parser("pipeline", help="run the stages of a JSON config")
    p.add_argument("config")
    p.add_argument("--stages", help="comma-separated subset of stages")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return INVALID
    except ValueError as e:
        if "q must be prime" in str(e):
            print(f"error: {e}", file=sys.stderr)
            return INVALID
        raise


if __name__ == "__main__":
    sys.exit(main())
