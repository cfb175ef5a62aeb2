"""Weak-local-residual error field and refine/coarsen flags.

Testing the mass equation's weak form against a nodal hat times a tent in
time collapses, for piecewise-constant data on two consecutive time levels,
to a small per-vertex sum over the incident cells: an area-weighted jump of
the water surface plus trapezoidal discharge terms weighted by the hat
gradients.  The per-cell indicator is the largest vertex magnitude and the
tolerance scales with the current worst cell, so flags track the solution's
own error distribution rather than an absolute scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REFINE, KEEP, COARSEN = 1, 0, -1

WLR_LEVELED = "wlr_leveled"
WLR_SIMPLE = "wlr_simple"
GRADIENT = "gradient"

INDICATOR_POLICIES = (WLR_LEVELED, WLR_SIMPLE, GRADIENT)


def hat_gradients(tri):
    """Gradients of the nodal hat functions, one per (vertex, incident cell).

    Returns (a, b) aligned to the triangulation's vertex-incidence CSR
    (``vc_offsets``/``vc_cells``): entry i is the gradient of the hat of
    the vertex owning slot i, restricted to cell ``vc_cells[i]``.
    """
    cells = tri.vc_cells
    kap = tri.vc_kappa.astype(np.int64)
    vi = tri.tri[cells, kap]
    v2 = tri.tri[cells, (kap + 1) % 3]
    v3 = tri.tri[cells, (kap + 2) % 3]
    xi, yi = tri.vx[vi], tri.vy[vi]
    x2, y2 = tri.vx[v2], tri.vy[v2]
    x3, y3 = tri.vx[v3], tri.vy[v3]
    den = (y3 - yi) * (x2 - xi) - (y2 - yi) * (x3 - xi)
    return (y2 - y3) / den, (x3 - x2) / den


@dataclass
class WlrField:
    """Vertex residuals, cell indicators and the tolerance they imply."""

    E: np.ndarray          # per-vertex residual
    e_cell: np.ndarray     # per-cell indicator, max |E| over the 3 vertices
    delta: float           # normalization max(max altitude, dt)
    omega: float           # tolerance sigma_tol * max e_cell


def wlr_vertex_errors(tri, U_old, U_new, dt):
    """Per-vertex weak residual of the mass equation between two states.

    Both states must live on the same triangulation; the residual vanishes
    identically (exact zeros) when the surface is unchanged and the
    discharges are zero.
    """
    if U_old.shape != U_new.shape or U_old.shape[0] != tri.num_cells:
        raise ValueError("states do not match the triangulation")
    a, b = hat_gradients(tri)
    cells = tri.vc_cells
    area = tri.area[cells]
    dw = U_old[cells, 0] - U_new[cells, 0]
    fu = U_old[cells, 1] + U_new[cells, 1]
    fv = U_old[cells, 2] + U_new[cells, 2]
    contrib = (area / 3.0) * dw \
        + a * (0.5 * dt) * area * fu \
        + b * (0.5 * dt) * area * fv
    E = np.zeros(tri.num_vertices)
    np.add.at(E, tri.tri[cells, tri.vc_kappa.astype(np.int64)], contrib)
    delta = max(float(tri.altitude.max()), float(dt))
    return E / delta, delta


def cell_indicator(tri, E):
    """Largest vertex residual magnitude per cell."""
    return np.abs(E[tri.tri]).max(axis=1)


def flag_cells(e_cell, sigma_tol, max_level, levels_m, c_coarsen=0.1,
               leveled=True):
    """Refine/coarsen/keep flags from the cell indicator field.

    With the leveled rule a cell at refinement depth m refines when its
    indicator exceeds omega * 2**m; refinement past ``max_level`` is never
    flagged.  An all-zero field keeps everything (omega is then zero and no
    strict inequality fires).
    """
    if not 0.0 < sigma_tol < 1.0:
        raise ValueError("sigma_tol must be in (0, 1)")
    emax = float(e_cell.max()) if e_cell.size else 0.0
    omega = sigma_tol * emax
    thresh = omega * np.exp2(levels_m) if leveled else np.full_like(e_cell, omega)
    flags = np.full(e_cell.shape, KEEP, dtype=np.int8)
    flags[(e_cell > thresh) & (levels_m < max_level)] = REFINE
    flags[e_cell < c_coarsen * omega] = COARSEN
    return flags, omega


def gradient_indicator(tri, w):
    """Squared magnitude of the unlimited water-surface gradient per cell."""
    from .reconstruction import limited_gradients

    gx, gy = limited_gradients(tri, w, limit=False)
    return gx * gx + gy * gy


def flag_cells_gradient(g2, max_level, levels_m, threshold=5e-4,
                        c_coarsen=0.1):
    """Flags from the gradient indicator with per-level threshold scaling."""
    thresh = threshold * np.exp2(levels_m)
    flags = np.full(g2.shape, KEEP, dtype=np.int8)
    flags[(g2 > thresh) & (levels_m < max_level)] = REFINE
    flags[g2 < c_coarsen * thresh] = COARSEN
    return flags


def compute_flags(tri, bathy, U_old, U_new, dt, cfg, levels_m):
    """One estimator pass: field, indicator and flags per the policy."""
    if cfg.indicator == GRADIENT:
        g2 = gradient_indicator(tri, U_new[:, 0])
        flags = flag_cells_gradient(g2, cfg.max_level, levels_m,
                                    cfg.grad_threshold, cfg.c_coarsen)
        return flags, WlrField(np.zeros(tri.num_vertices), g2, 0.0, 0.0)
    E, delta = wlr_vertex_errors(tri, U_old, U_new, dt)
    e = cell_indicator(tri, E)
    flags, omega = flag_cells(e, cfg.sigma_tol, cfg.max_level, levels_m,
                              cfg.c_coarsen, leveled=cfg.indicator == WLR_LEVELED)
    return flags, WlrField(E, e, delta, omega)
