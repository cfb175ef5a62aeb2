"""Benchmark harnesses: convergence tables, CPU ratios, indicator comparison.

The convergence study measures L1 errors of the water surface against a
reference computed by this same solver on a finer uniform mesh, restricted
onto each test mesh by conservative area-weighted averaging (reference
cells are binned into the active test cells containing their centroids;
for nested uniform refinements this is exact).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .scenarios import make_config
from .solver import run

logger = logging.getLogger(__name__)


def locate_base_cell(domain, nx, ny, x, y):
    """Cell ids of a uniform mesh containing the given points (vectorized)."""
    x0, x1, y0, y1 = domain
    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    i = np.clip(((x - x0) / dx).astype(np.int64), 0, nx - 1)
    j = np.clip(((y - y0) / dy).astype(np.int64), 0, ny - 1)
    xi = (x - x0 - i * dx) / dx
    eta = (y - y0 - j * dy) / dy
    lower = eta <= xi
    return 2 * (i * ny + j) + np.where(lower, 0, 1)


def _descend(hier, node, x, y):
    """Walk down the hierarchy to the active node containing (x, y)."""
    vx, vy = hier.vx, hier.vy
    while not hier.node_active[node]:
        if node in hier.active_green:
            a, b, _p = hier.active_green[node]
            kids = [a, b]
        else:
            kids = hier.node_children.get(node)
            if kids is None:
                raise RuntimeError(f"node {node} is inactive with no children")
        best, best_score = kids[0], -np.inf
        for c in kids:
            if not hier.node_active[c] and c not in hier.active_green \
                    and hier.node_children.get(c) is None:
                continue
            v = hier.node_v[c]
            score = np.inf
            for k in range(3):
                ax, ay = vx[v[k]], vy[v[k]]
                bx, by = vx[v[(k + 1) % 3]], vy[v[(k + 1) % 3]]
                cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
                score = min(score, cross / hier.node_area[c])
            if score > best_score:
                best, best_score = c, score
        node = best
    return node


def restrict_reference(hier, test_tri, ref_report):
    """Area-weighted restriction of a uniform reference run onto a test mesh."""
    ref_tri = ref_report.tri
    node_of = {int(n): i for i, n in enumerate(test_tri.node_ids)}
    sums = np.zeros(test_tri.num_cells)
    areas = np.zeros(test_tri.num_cells)
    w_ref = ref_report.state[:, 0]
    domain, nx, ny = hier_domain(hier)
    base_ids = locate_base_cell(domain, nx, ny, ref_tri.cx, ref_tri.cy)
    for rc in range(ref_tri.num_cells):
        node = _descend(hier, int(base_ids[rc]), ref_tri.cx[rc], ref_tri.cy[rc])
        i = node_of[node]
        sums[i] += ref_tri.area[rc] * w_ref[rc]
        areas[i] += ref_tri.area[rc]
    if np.any(areas == 0.0):
        raise RuntimeError("test cells without reference coverage")
    return sums / areas


def hier_domain(hier):
    """Recover (domain, nx, ny) of the hierarchy's uniform base mesh."""
    roots = [n for n in range(len(hier.node_v)) if hier.node_parent[n] == -1]
    vx = np.asarray(hier.vx)
    vy = np.asarray(hier.vy)
    used = sorted({v for n in roots for v in hier.node_v[n]})
    x0, x1 = vx[used].min(), vx[used].max()
    y0, y1 = vy[used].min(), vy[used].max()
    # root cells come in pairs per square
    nsq = len(roots) // 2
    # squares are congruent: count distinct x of root vertices
    nx = len(np.unique(np.round((vx[used] - x0) / (x1 - x0) * 1e12))) - 1
    ny = nsq // nx
    return (x0, x1, y0, y1), nx, ny


@dataclass
class ConvergenceRow:
    level: int
    base_n: int
    cells: int
    l1: float
    rate: float | None


def convergence_study(scenario_id, meshes, reference_n, levels=(0, 1),
                      t_end=None, out_dir="out"):
    """L1 errors and observed rates against a finer uniform reference.

    Returns (rows, reference_report); rows are grouped by adaptive level
    with rates between successive base meshes.
    """
    overrides = dict(max_level=0, nx=reference_n, ny=reference_n,
                     out_dir=out_dir)
    if t_end is not None:
        overrides["t_end"] = t_end
    ref_cfg = make_config(scenario_id, **overrides)
    logger.info("reference run on 2x%dx%d", reference_n, reference_n)
    ref = run(ref_cfg, write_files=False)

    rows = []
    for lvl in levels:
        prev = None
        for n in meshes:
            cfg = make_config(scenario_id, max_level=lvl, nx=n, ny=n,
                              out_dir=out_dir,
                              **({"t_end": t_end} if t_end is not None else {}))
            rep = run(cfg, write_files=False)
            w_ref = restrict_reference(rep.hier, rep.tri, ref)
            l1 = float((rep.tri.area * np.abs(rep.state[:, 0] - w_ref)).sum())
            rate = None if prev is None else float(np.log2(prev / l1))
            rows.append(ConvergenceRow(lvl, n, rep.tri.num_cells, l1, rate))
            logger.info("level %d, base %d: cells=%d L1=%.3e rate=%s",
                        lvl, n, rep.tri.num_cells, l1,
                        f"{rate:.2f}" if rate else "-")
            prev = l1
    return rows, ref


@dataclass
class CpuRatioRow:
    level: int
    uniform_n: int
    uniform_cells: int
    adaptive_cells: int
    r_total: float
    r_no_grid: float
    uniform_s: float
    adaptive_s: float
    adaptive_grid_s: float


def cpu_ratio(scenario_id, base_n, levels=(1,), t_end=None, out_dir="out",
              **extra):
    """Wall-clock ratio of the uniform run to the adaptive run.

    For each level M the adaptive run starts from base_n and refines up to
    M; the uniform counterpart uses base_n * 2**M cells per direction so
    both share the smallest cell size.  Grid-generation time (adapt,
    projection, bathymetry refinement) is also excluded in a second figure.
    """
    rows = []
    for lvl in levels:
        kw = dict(extra)
        if t_end is not None:
            kw["t_end"] = t_end
        uni_cfg = make_config(scenario_id, max_level=0,
                              nx=base_n * 2 ** lvl, ny=base_n * 2 ** lvl,
                              out_dir=out_dir, **kw)
        ada_cfg = make_config(scenario_id, max_level=lvl, nx=base_n, ny=base_n,
                              out_dir=out_dir, **kw)
        t0 = time.perf_counter()
        uni = run(uni_cfg, write_files=False)
        uni_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        ada = run(ada_cfg, write_files=False)
        ada_s = time.perf_counter() - t0
        grid_s = ada.wall_grid
        rows.append(CpuRatioRow(
            lvl, uni_cfg.nx, uni.tri.num_cells, ada.tri.num_cells,
            r_total=uni_s / ada_s,
            r_no_grid=uni_s / max(ada_s - grid_s, 1e-9),
            uniform_s=uni_s, adaptive_s=ada_s, adaptive_grid_s=grid_s))
        logger.info("M=%d: uniform %.2fs adaptive %.2fs (grid %.2fs) "
                    "R=%.2f / %.2f", lvl, uni_s, ada_s, grid_s,
                    rows[-1].r_total, rows[-1].r_no_grid)
    return rows


@dataclass
class IndicatorComparison:
    wlr_report: object
    grad_report: object
    rows: list = field(default_factory=list)


def compare_indicators(scenario_id, base_n=50, max_level=3, t_end=None,
                       out_dir="out"):
    """Run the WLR and gradient indicators side by side and tabulate."""
    kw = {"t_end": t_end} if t_end is not None else {}
    wlr_cfg = make_config(scenario_id, max_level=max_level, nx=base_n,
                          ny=base_n, indicator="wlr_leveled",
                          out_dir=out_dir, **kw)
    grad_cfg = make_config(scenario_id, max_level=max_level, nx=base_n,
                           ny=base_n, indicator="gradient",
                           out_dir=out_dir, **kw)
    wlr_rep = run(wlr_cfg, write_files=False)
    grad_rep = run(grad_cfg, write_files=False)
    comp = IndicatorComparison(wlr_rep, grad_rep)
    for name, rep in (("wlr", wlr_rep), ("gradient", grad_rep)):
        refined = rep.tri.cell_m > 0
        comp.rows.append(dict(
            indicator=name,
            active_cells=rep.tri.num_cells,
            refined_cells=int(refined.sum()),
            refined_area=float(rep.tri.area[refined].sum()),
            wall_s=rep.wall_total,
        ))
    return comp
