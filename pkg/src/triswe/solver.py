"""Driver: initial data, the evolve/estimate/adapt loop, frames and reports."""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .amr import MeshHierarchy, adapt, project_state
from .bathymetry import Bathymetry, refine_bathymetry
from .mesh import read_mesh, uniform_mesh
from .output import append_csv_row, open_csv, write_frame
from .reconstruction import limited_gradients, reconstruct
from .scenarios import RunConfig, scenario
from .timestepping import SolverError, SolverParams, evolve_macro_step
from .wlr import compute_flags

logger = logging.getLogger(__name__)


@dataclass
class RunReport:
    """Diagnostics of one run; per-frame rows plus totals and timings."""

    config: RunConfig
    rows: list = field(default_factory=list)
    wall_total: float = 0.0
    wall_evolve: float = 0.0
    wall_grid: float = 0.0      # adapt + project + bathymetry refinement
    wall_wlr: float = 0.0
    wall_io: float = 0.0
    min_h: float = np.inf
    min_h_raw: float = np.inf
    max_dev: float = 0.0        # max surface deviation over every macro step
    dry_snaps: int = 0
    reflux_borrows: int = 0
    macro_steps: int = 0
    mass_initial: float = 0.0
    mass_final: float = 0.0
    aborted: str | None = None
    # final fields for harnesses and plotting
    tri: object = None
    state: object = None
    bathy: object = None
    hier: object = None
    wlr: object = None


def solver_params(cfg, bathy_scale):
    kappa = cfg.kappa_dry
    if kappa is None:
        kappa = 1e-12 * max(1.0, bathy_scale)
    return SolverParams(g=cfg.gravity, sigma_flux=cfg.sigma_flux, eps=cfg.eps,
                        tau=cfg.tau, kappa_dry=kappa, manning_n=cfg.manning_n,
                        dt_max=cfg.dt_max)


def initial_state(tri, bathy, sc):
    """Cell averages from the scenario's level/velocity functions.

    The wet level is sampled at centroids and floored by the discrete
    bottom mean, so cells marked dry start with exactly zero depth.
    """
    level = sc.init_level(tri.cx, tri.cy)
    w = np.maximum(level, bathy.b_cell)
    h = w - bathy.b_cell
    U = np.zeros((tri.num_cells, 3))
    U[:, 0] = w
    U[:, 1] = h * sc.init_u(tri.cx, tri.cy)
    U[:, 2] = h * sc.init_v(tri.cx, tri.cy)
    return U


def run(cfg, write_files=True, frame_hook=None):
    """Execute a configured run to t_end; returns the populated RunReport.

    Steps per macro step: evolve on the current adaptive mesh, estimate the
    error from the two time levels, flag, adapt, and project.  Frames are
    written whenever the clock crosses a multiple of the output interval.
    """
    cfg.validate()
    sc = scenario(cfg.scenario, perturbation=cfg.perturbation)
    report = RunReport(config=cfg)
    wall0 = time.perf_counter()

    if cfg.mesh_file:
        base = read_mesh(cfg.mesh_file)
    else:
        base = uniform_mesh(cfg.domain, cfg.nx, cfg.ny, boundary=cfg.boundary)
    hier = MeshHierarchy(base, max_level=cfg.max_level)
    tri = hier.snapshot()
    bvals = np.asarray(sc.bottom(np.asarray(hier.vx), np.asarray(hier.vy)),
                       dtype=np.float64)
    bathy = Bathymetry(tri, bvals[tri.vertex_map])
    params = solver_params(cfg, float(np.abs(bvals).max()))
    U = initial_state(tri, bathy, sc)

    csv = None
    frame_idx = 0
    if write_files:
        os.makedirs(cfg.out_dir, exist_ok=True)
        csv = open_csv(os.path.join(cfg.out_dir, "diagnostics.csv"))

    def diagnostics(t):
        h = U[:, 0] - bathy.b_cell
        wet = h > params.kappa_dry
        dev = float(np.abs(U[wet, 0] - sc.w_eq).max()) if np.any(wet) else 0.0
        return dict(t=t, mass=float((tri.area * h).sum()), max_dev=dev,
                    min_h=float(h.min()), active_cells=tri.num_cells)

    def emit(t, wlr_field, flags):
        nonlocal frame_idx
        row = diagnostics(t)
        row["wall_s"] = time.perf_counter() - wall0
        report.rows.append(row)
        report.max_dev = max(report.max_dev, row["max_dev"])
        if write_files:
            t_io = time.perf_counter()
            append_csv_row(csv, row["t"], row["mass"], row["max_dev"],
                           row["min_h"], row["active_cells"], row["wall_s"])
            path = os.path.join(cfg.out_dir, f"frame_{frame_idx:04d}.vtu")
            write_frame(tri, U, bathy, wlr_field,
                        (tri.cell_m, flags if flags is not None
                         else np.zeros(tri.num_cells, dtype=int)), path)
            report.wall_io += time.perf_counter() - t_io
        if frame_hook:
            frame_hook(t, tri, U, bathy)
        frame_idx += 1

    t = 0.0
    report.mass_initial = float((tri.area * (U[:, 0] - bathy.b_cell)).sum())
    emit(t, None, None)
    next_frame = cfg.output_interval if cfg.output_interval > 0 else np.inf
    wlr_field, flags = None, None

    try:
        while t < cfg.t_end * (1.0 - 1e-12):
            t0 = time.perf_counter()
            U_prev = U
            U, t_new, stats = evolve_macro_step(tri, bathy, U, t, params,
                                                dt_cap=cfg.t_end - t)
            report.wall_evolve += time.perf_counter() - t0
            report.macro_steps += 1
            report.min_h = min(report.min_h, stats.min_h)
            report.min_h_raw = min(report.min_h_raw, stats.min_h_raw)
            report.dry_snaps += stats.dry_snaps
            report.reflux_borrows += stats.reflux_borrows
            hcur = U[:, 0] - bathy.b_cell
            wet_now = hcur > params.kappa_dry
            if np.any(wet_now):
                report.max_dev = max(report.max_dev, float(
                    np.abs(U[wet_now, 0] - sc.w_eq).max()))

            if cfg.max_level > 0:
                t1 = time.perf_counter()
                flags, wlr_field = compute_flags(tri, bathy, U_prev, U,
                                                 stats.dt, cfg, tri.cell_m)
                report.wall_wlr += time.perf_counter() - t1

                t2 = time.perf_counter()
                recon = reconstruct(tri, bathy, U, params.resolve_tau(tri),
                                    params.eps, params.kappa_dry)
                new_tri = adapt(hier, flags, recon, bvals)
                if new_tri is not tri:
                    bvals = refine_bathymetry(bvals, hier.consume_origins(),
                                              len(hier.vx))
                    gx, gy = limited_gradients(tri, U[:, 1])
                    ghu = np.stack([gx, gy], axis=1)
                    gx, gy = limited_gradients(tri, U[:, 2])
                    ghv = np.stack([gx, gy], axis=1)
                    U = project_state(hier, tri, new_tri, U, recon, bvals,
                                      grad_hu=ghu, grad_hv=ghv)
                    tri = new_tri
                    bathy = Bathymetry(tri, bvals[tri.vertex_map])
                    wlr_field, flags = None, None
                report.wall_grid += time.perf_counter() - t2

            t = cfg.t_end if t_new >= cfg.t_end * (1.0 - 1e-12) else t_new
            if t >= next_frame * (1.0 - 1e-12):
                emit(t, wlr_field, flags)
                while next_frame <= t:
                    next_frame += cfg.output_interval
    except SolverError as err:
        report.aborted = str(err)
        logger.error("run aborted at t=%.6g: %s", t, err)
        emit(t, wlr_field, flags)

    if report.aborted is None and (not report.rows or report.rows[-1]["t"] != t):
        emit(t, wlr_field, flags)
    report.mass_final = float((tri.area * (U[:, 0] - bathy.b_cell)).sum())
    report.wall_total = time.perf_counter() - wall0
    report.tri, report.state, report.bathy = tri, U, bathy
    report.hier, report.wlr = hier, wlr_field
    if csv is not None:
        csv.close()
    return report
