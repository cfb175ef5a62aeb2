"""Matplotlib figures rendered next to the delimited outputs."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import PolyCollection


def _cell_polys(tri):
    return np.stack([tri.vx[tri.tri], tri.vy[tri.tri]], axis=-1)


def plot_cell_field(tri, values, path, title="", cmap="viridis",
                    mesh_lines=False, clim=None):
    """Filled triangles colored by a per-cell value, optionally with edges."""
    fig, ax = plt.subplots(figsize=(7, 7 * (tri.ymax - tri.ymin)
                                    / max(tri.xmax - tri.xmin, 1e-12)))
    pc = PolyCollection(_cell_polys(tri), array=np.asarray(values), cmap=cmap,
                        edgecolors="k" if mesh_lines else "face",
                        linewidths=0.2 if mesh_lines else 0.0)
    if clim:
        pc.set_clim(*clim)
    ax.add_collection(pc)
    ax.set_xlim(tri.xmin, tri.xmax)
    ax.set_ylim(tri.ymin, tri.ymax)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.colorbar(pc, ax=ax, shrink=0.8)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_mesh(tri, path, title="", color_by_level=None):
    fig, ax = plt.subplots(figsize=(7, 7 * (tri.ymax - tri.ymin)
                                    / max(tri.xmax - tri.xmin, 1e-12)))
    if color_by_level is not None:
        pc = PolyCollection(_cell_polys(tri), array=np.asarray(color_by_level),
                            cmap="YlOrRd", edgecolors="k", linewidths=0.3)
        ax.add_collection(pc)
    else:
        pc = PolyCollection(_cell_polys(tri), facecolors="none",
                            edgecolors="k", linewidths=0.3)
        ax.add_collection(pc)
    ax.set_xlim(tri.xmin, tri.xmax)
    ax.set_ylim(tri.ymin, tri.ymax)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_deviation_history(rows, path, w_eq_label="w_eq"):
    """Max surface deviation over time, one line per run."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, rr in rows.items():
        ts = [r["t"] for r in rr]
        dev = [r["max_dev"] for r in rr]
        ax.plot(ts, dev, marker=".", label=label)
    ax.set_xlabel("t")
    ax.set_ylabel(f"max |w - {w_eq_label}|")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_convergence(rows, path):
    """log-log L1 error against cell count with a second-order guide."""
    fig, ax = plt.subplots(figsize=(6, 5))
    by_level = {}
    for r in rows:
        by_level.setdefault(r.level, []).append(r)
    for lvl, rr in sorted(by_level.items()):
        cells = [r.cells for r in rr]
        errs = [r.l1 for r in rr]
        ax.loglog(cells, errs, "o-", label=f"max level {lvl}")
    if rows:
        c0, e0 = rows[0].cells, rows[0].l1
        cs = np.array([c0, 16 * c0])
        ax.loglog(cs, e0 * (cs / c0) ** -1.0, "k--", alpha=0.5,
                  label="second order")
    ax.set_xlabel("active cells")
    ax.set_ylabel("L1 error of w")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_cpu_ratio(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r.r_total for r in rows], width=0.4, label="total")
    ax.bar(x + 0.2, [r.r_no_grid for r in rows], width=0.4,
           label="without grid generation")
    ax.axhline(1.0, color="k", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels([f"M={r.level}\n2x{r.uniform_n}^2" for r in rows])
    ax.set_ylabel("CPU ratio uniform / adaptive")
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def render_run_figures(report, out_dir):
    """Final-state field, mesh and diagnostic history for one run."""
    os.makedirs(out_dir, exist_ok=True)
    tri, U, bathy = report.tri, report.state, report.bathy
    plot_cell_field(tri, U[:, 0], os.path.join(out_dir, "water_surface.png"),
                    title=f"w at t={report.rows[-1]['t']:.3f}")
    plot_cell_field(tri, U[:, 0] - bathy.b_cell,
                    os.path.join(out_dir, "depth.png"), title="h", cmap="Blues")
    plot_mesh(tri, os.path.join(out_dir, "mesh.png"),
              title=f"active mesh ({tri.num_cells} cells)",
              color_by_level=tri.cell_m)
    plot_deviation_history({report.config.scenario: report.rows},
                           os.path.join(out_dir, "deviation.png"))
