"""Command-line entry points: run, convergence, cpu-ratio, compare-indicators."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .harness import compare_indicators, convergence_study, cpu_ratio
from .plots import (
    plot_cell_field,
    plot_convergence,
    plot_cpu_ratio,
    plot_mesh,
    render_run_figures,
)
from .scenarios import ConfigError, RunConfig, make_config
from .solver import run

logger = logging.getLogger(__name__)


def _int_list(text):
    return [int(v) for v in text.split(",") if v]


def cmd_run(args):
    if args.config:
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = make_config(args.scenario)
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.validate()
    report = run(cfg)
    render_run_figures(report, cfg.out_dir)
    last = report.rows[-1]
    status = f"aborted: {report.aborted}" if report.aborted else "completed"
    print(f"{status} at t={last['t']:.6g}: {last['active_cells']} cells, "
          f"mass {last['mass']:.12e}, min h {report.min_h:.3e}, "
          f"{report.macro_steps} macro steps, {report.wall_total:.2f}s "
          f"({report.wall_grid:.2f}s grid generation)")
    print(f"outputs in {cfg.out_dir}/")
    return 1 if report.aborted else 0


def cmd_convergence(args):
    rows, _ref = convergence_study(args.scenario, _int_list(args.meshes),
                                   args.reference, levels=_int_list(args.levels),
                                   t_end=args.t_end, out_dir=args.out)
    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "convergence.csv")
    with open(table, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["level", "base_n", "cells", "l1_error", "rate"])
        for r in rows:
            wr.writerow([r.level, r.base_n, r.cells, f"{r.l1:.6e}",
                         "" if r.rate is None else f"{r.rate:.3f}"])
    plot_convergence(rows, os.path.join(args.out, "convergence.png"))
    for r in rows:
        rate = "-" if r.rate is None else f"{r.rate:5.2f}"
        print(f"M={r.level} base 2x{r.base_n}^2: {r.cells:>8d} cells  "
              f"L1 {r.l1:.3e}  rate {rate}")
    print(f"table and figure in {args.out}/")
    return 0


def cmd_cpu_ratio(args):
    kw = {}
    if args.t_end is not None:
        kw["t_end"] = args.t_end
    rows = cpu_ratio(args.scenario, args.base, levels=_int_list(args.levels),
                     out_dir=args.out, **kw)
    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "cpu_ratio.csv")
    with open(table, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["level", "uniform_n", "uniform_cells", "adaptive_cells",
                     "r_total", "r_no_grid", "uniform_s", "adaptive_s"])
        for r in rows:
            wr.writerow([r.level, r.uniform_n, r.uniform_cells,
                         r.adaptive_cells, f"{r.r_total:.3f}",
                         f"{r.r_no_grid:.3f}", f"{r.uniform_s:.3f}",
                         f"{r.adaptive_s:.3f}"])
    plot_cpu_ratio(rows, os.path.join(args.out, "cpu_ratio.png"))
    for r in rows:
        print(f"M={r.level}: uniform 2x{r.uniform_n}^2 {r.uniform_s:.2f}s vs "
              f"adaptive {r.adaptive_cells} cells {r.adaptive_s:.2f}s -> "
              f"R_CPU {r.r_total:.2f} (no grid gen {r.r_no_grid:.2f})")
    print(f"table and figure in {args.out}/")
    return 0


def cmd_compare_indicators(args):
    comp = compare_indicators(args.scenario, base_n=args.base,
                              max_level=args.levels, t_end=args.t_end,
                              out_dir=args.out)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "indicators.csv"), "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["indicator", "active_cells", "refined_cells",
                     "refined_area", "wall_s"])
        for r in comp.rows:
            wr.writerow([r["indicator"], r["active_cells"], r["refined_cells"],
                         f"{r['refined_area']:.6e}", f"{r['wall_s']:.3f}"])
    for name, rep in (("wlr", comp.wlr_report), ("gradient", comp.grad_report)):
        plot_mesh(rep.tri, os.path.join(args.out, f"mesh_{name}.png"),
                  title=f"{name} indicator ({rep.tri.num_cells} cells)",
                  color_by_level=rep.tri.cell_m)
        plot_cell_field(rep.tri, rep.state[:, 0],
                        os.path.join(args.out, f"w_{name}.png"),
                        title=f"w, {name} indicator")
    for r in comp.rows:
        print(f"{r['indicator']:>9}: {r['active_cells']} cells, "
              f"{r['refined_cells']} refined, area {r['refined_area']:.3f}, "
              f"{r['wall_s']:.2f}s")
    print(f"table and figures in {args.out}/")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="triswe",
        description="Adaptive central-upwind shallow water solver on "
                    "triangular meshes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run one configured simulation")
    pr.add_argument("--config", help="JSON config file (RunConfig fields)")
    pr.add_argument("--scenario", default="ex1",
                    help="preset id when no config file is given")
    pr.add_argument("--threads", type=int, default=None)
    pr.add_argument("--out", default=None, help="output directory")
    pr.set_defaults(func=cmd_run)

    pc = sub.add_parser("convergence", help="L1 convergence table")
    pc.add_argument("--scenario", default="ex1")
    pc.add_argument("--meshes", default="25,50,100",
                    help="comma-separated base mesh sizes")
    pc.add_argument("--reference", type=int, default=200)
    pc.add_argument("--levels", default="0,1")
    pc.add_argument("--t-end", type=float, default=None)
    pc.add_argument("--out", default="out")
    pc.set_defaults(func=cmd_convergence)

    pu = sub.add_parser("cpu-ratio", help="uniform vs adaptive wall-clock ratio")
    pu.add_argument("--scenario", default="ex2_perturb")
    pu.add_argument("--base", type=int, default=50)
    pu.add_argument("--levels", default="1,2")
    pu.add_argument("--t-end", type=float, default=None)
    pu.add_argument("--out", default="out")
    pu.set_defaults(func=cmd_cpu_ratio)

    pi = sub.add_parser("compare-indicators",
                        help="WLR vs gradient refinement indicator")
    pi.add_argument("--scenario", default="ex2_island")
    pi.add_argument("--base", type=int, default=50)
    pi.add_argument("--levels", type=int, default=3)
    pi.add_argument("--t-end", type=float, default=None)
    pi.add_argument("--out", default="out")
    pi.set_defaults(func=cmd_compare_indicators)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
