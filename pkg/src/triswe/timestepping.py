"""Adaptive two-stage SSPRK2 evolution with level-based local time steps.

Cells are grouped by size into time levels; a level-l cell nominally steps
with 2**-l of the reference CFL step, shrunk further when its local speeds
outgrow the frozen reference speed.  The scheduler always advances the
lagging level (coarsest first on ties), so a fine cell evaluating a flux
can interpolate its coarser neighbors linearly in time between states they
have already produced.  Edge transfers actually applied on either side of a
cross-level edge are accumulated; at the end of the macro step the coarse
side adopts the fine side's totals, which makes the interior telescoping
sum exact and global conservation independent of the level layout.

Positivity rests on the draining time steps: an edge draining a cell never
moves more water than the cell holds, so depths stay nonnegative without
clipping; departures below roundoff are snapped to exactly dry and counted.
"""

from __future__ import annotations

import logging
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .fluxes import edge_flux, local_speeds, manning_friction, source_quadrature
from .reconstruction import DRY, FULL, edge_point_values, reconstruct

logger = logging.getLogger(__name__)


class SolverError(Exception):
    """Instability or internal inconsistency during time evolution."""


class _MacroRetry(Exception):
    """Speeds outgrew the frozen reference step; restart with a smaller one."""


@dataclass
class SolverParams:
    """Numerical parameters of the evolution, a subset of the run config."""

    g: float = 9.8
    sigma_flux: float = 1e-6
    eps: float = 1e-4
    tau: float | None = None          # None: max active cell area squared
    kappa_dry: float = 1e-12
    manning_n: float = 0.0
    dt_max: float = 1e-3
    cfl_safety: float = 0.9
    mu_retry: float = 4.0
    max_retries: int = 8

    def resolve_tau(self, tri):
        return float(np.max(tri.area)) ** 2 if self.tau is None else self.tau


@dataclass
class LevelGroup:
    level: int
    cells: np.ndarray          # cells advanced by this group
    recon_cells: np.ndarray    # two-ring halo the reconstruction needs
    edges: np.ndarray          # edges incident to the group's cells
    edges2: np.ndarray         # edges incident to the one-ring halo
    drain_cells: np.ndarray    # cells whose draining step the edges need
    cross: np.ndarray          # edges of `edges` facing another level


@dataclass
class LevelPartition:
    levels: np.ndarray
    groups: list[LevelGroup] = field(default_factory=list)


def assign_levels(tri, force_uniform=False):
    """Time level per cell from the altitude ratio, plus per-level index sets.

    A cell joins level l when 2**l first reaches the ratio of the largest
    minimal altitude to its own (coarsest cells sit at level 0).
    """
    minalt = tri.altitude.min(axis=1)
    if force_uniform:
        levels = np.zeros(tri.num_cells, dtype=np.int64)
    else:
        ratio = minalt.max() / minalt
        levels = np.ceil(np.log2(ratio * (1.0 - 1e-12))).astype(np.int64)
        levels = np.maximum(levels, 0)

    lev_owner = levels[tri.e_cell]
    lev_other = np.where(tri.e_other >= 0, levels[np.maximum(tri.e_other, 0)], -1)
    part = LevelPartition(levels=levels)
    nlev = int(levels.max()) + 1
    for l in range(nlev):
        cells = np.flatnonzero(levels == l)
        if cells.size == 0:
            continue
        if nlev == 1:
            allc = np.arange(tri.num_cells)
            alle = np.arange(tri.num_edges)
            part.groups.append(LevelGroup(l, cells, allc, alle, alle, allc,
                                          np.empty(0, dtype=np.int64)))
            continue
        mask = np.zeros(tri.num_cells, dtype=bool)
        mask[cells] = True
        ring1 = mask.copy()
        nbr = tri.neighbor[cells]
        ring1[nbr[nbr >= 0]] = True
        ring2 = ring1.copy()
        r1cells = np.flatnonzero(ring1)
        nbr2 = tri.neighbor[r1cells]
        ring2[nbr2[nbr2 >= 0]] = True

        e_in = mask[tri.e_cell] | (np.where(tri.e_other >= 0,
                                            mask[np.maximum(tri.e_other, 0)], False))
        e2_in = ring1[tri.e_cell] | (np.where(tri.e_other >= 0,
                                              ring1[np.maximum(tri.e_other, 0)], False))
        edges = np.flatnonzero(e_in)
        edges2 = np.flatnonzero(e2_in)
        # periodic ghosts evaluate the far partner's reconstruction
        partners = tri.e_partner_cell[edges2]
        ring2[partners[partners >= 0]] = True
        cross = edges[(lev_other[edges] >= 0) & (lev_owner[edges] != lev_other[edges])]
        part.groups.append(LevelGroup(
            l, cells, np.flatnonzero(ring2), edges, edges2,
            r1cells, cross))
    return part


def reference_dt(tri, a_max, params):
    """CFL reference step 0.9 * max_j(min_k r_jk) / (6 a_max)."""
    if a_max < params.sigma_flux:
        return params.dt_max
    return params.cfl_safety * float(tri.altitude.min(axis=1).max()) / (6.0 * a_max)


def local_dt(level, dt_ref, mu):
    """Level step 2**-l * dt / max(mu, 1)."""
    return 2.0 ** (-level) * dt_ref / max(mu, 1.0)


def draining_dt(tri, wet, hbar, H1, dt_l, cells):
    """Per-cell draining steps |T| h / (sum of outflows), by wetness class.

    Fully flooded cells never need the brake (their drain is the local
    step); dry cells freeze their outflow edges entirely.
    """
    eids = tri.cell_edge_id[cells]
    sgn = tri.cell_edge_sign[cells]
    outflow = np.maximum(sgn * H1[eids], 0.0).sum(axis=1)
    drain = np.full(cells.shape, np.inf)
    klass = wet[cells]
    part = klass != FULL
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = tri.area[cells] * np.maximum(hbar[cells], 0.0) / outflow
    drain[part] = np.where(outflow[part] > 0.0, raw[part], np.inf)
    drain[klass == DRY] = 0.0
    return np.minimum(drain, dt_l)


def edge_draining_dt(tri, drain_full, H1, dt_l, eids):
    """Edge steps: the drain of whichever side the edge takes water from."""
    own = drain_full[tri.e_cell[eids]]
    other_idx = tri.e_other[eids]
    nb = np.where(other_idx >= 0, drain_full[np.maximum(other_idx, 0)], own)
    chosen = np.where(H1[eids] > 0.0, own, nb)
    return np.minimum(chosen, dt_l)


def apply_boundary_conditions(tri, bathy, recon):
    """Ghost midpoint states for every boundary edge, per its tag.

    Returns (eids, w, h, u, v) for the ghost side; interior edges are not
    included.  This is the same closure the flux assembly uses.
    """
    eids = np.flatnonzero(tri.e_other < 0)
    ev = edge_point_values(tri, bathy, recon, eids)
    return eids, ev.w_out, ev.h_out, ev.u_out, ev.v_out


@dataclass
class MacroStats:
    dt: float = 0.0
    substeps: int = 0
    min_h: float = np.inf       # smallest stored depth after any substep
    min_h_raw: float = np.inf   # smallest pre-snap depth (roundoff dips show)
    retries: int = 0
    dry_snaps: int = 0
    reflux_borrows: int = 0
    a_max: float = 0.0


def _stage_fluxes(tri, bathy, V, params, tau, group, slot):
    """Reconstruction, speeds and fluxes for one stage of one group."""
    from .reconstruction import scratch_buffer

    recon = reconstruct(tri, bathy, V, tau, params.eps, params.kappa_dry,
                        sel=group.recon_cells, reuse=slot)
    ev = edge_point_values(tri, bathy, recon, group.edges2)
    a_in, a_out = local_speeds(ev.h_in, ev.u_in, ev.v_in,
                               ev.h_out, ev.u_out, ev.v_out,
                               tri.e_nx[group.edges2], tri.e_ny[group.edges2],
                               params.g)
    H = edge_flux(ev.w_in, ev.h_in, ev.u_in, ev.v_in,
                  ev.w_out, ev.h_out, ev.u_out, ev.v_out,
                  a_in, a_out, tri.e_len[group.edges2],
                  tri.e_nx[group.edges2], tri.e_ny[group.edges2],
                  params.g, params.sigma_flux)
    H_full = scratch_buffer(tri, (slot, "H"), (tri.num_edges, 3))
    H_full[group.edges2] = H
    speeds = np.maximum(a_in, a_out)
    return recon, H_full, speeds


def _stage_update(tri, bathy, V, U_base, params, tau, dt_l, group, H_full, recon,
                  stats, slot):
    """One explicit stage: draining steps, flux divergence, source, friction."""
    from .reconstruction import scratch_buffer

    drain = scratch_buffer(tri, (slot, "drain"), (tri.num_cells,))
    hbar = V[:, 0] - bathy.b_cell
    drain_cells = group.drain_cells
    drain[drain_cells] = draining_dt(tri, recon.wet, hbar, H_full[:, 0],
                                     dt_l, drain_cells)
    dtjk = scratch_buffer(tri, (slot, "dtjk"), (tri.num_edges,))
    dtjk[group.edges] = edge_draining_dt(tri, drain, H_full[:, 0], dt_l,
                                         group.edges)

    S = group.cells
    eids = tri.cell_edge_id[S]
    sgn = tri.cell_edge_sign[S].astype(np.float64)
    transfer = dtjk[eids, None] * H_full[eids]
    div = (sgn[:, :, None] * transfer).sum(axis=1) / tri.area[S, None]

    ratios = dtjk[eids] / dt_l
    s2, s3 = source_quadrature(tri, bathy, recon, ratios, params.g, sel=S)

    out = U_base[S] - div
    out[:, 1] += dt_l * s2
    out[:, 2] += dt_l * s3
    if params.manning_n > 0.0:
        h_new = np.maximum(out[:, 0] - bathy.b_cell[S], 0.0)
        out[:, 1], out[:, 2] = manning_friction(
            h_new, out[:, 1], out[:, 2], params.manning_n, params.g, dt_l,
            params.eps)

    # positivity: the draining construction keeps depths nonnegative up to
    # roundoff; snap those, fail loudly on anything larger
    h_after = out[:, 0] - bathy.b_cell[S]
    scale = max(1.0, float(np.abs(V[:, 0]).max()))
    bad = h_after < -1e-10 * scale
    if np.any(bad):
        j = S[np.argmin(h_after)]
        raise SolverError(f"negative depth {h_after.min():.3e} in cell {j}")
    stats.min_h_raw = min(stats.min_h_raw, float(h_after.min()))
    tiny = h_after < 0.0
    if np.any(tiny):
        out[tiny, 0] = bathy.b_cell[S][tiny]
        stats.dry_snaps += int(tiny.sum())
    stats.min_h = min(stats.min_h, float(np.maximum(h_after, 0.0).min()))
    return out, dtjk


def _interp_history(times, values, t):
    """Linear interpolation with clamping at both ends."""
    if t <= times[0]:
        return values[0]
    if t >= times[-1]:
        return values[-1]
    i = bisect_left(times, t)
    t0, t1 = times[i - 1], times[i]
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * values[i - 1] + w * values[i]


def evolve_macro_step(tri, bathy, U, t, params, dt_override=None,
                      dt_cap=None, force_uniform_level=False):
    """Advance all cells from t to t + dt with level-local substeps.

    Returns (U_new, t_new, stats).  The reference step comes from the CFL
    bound at time t unless ``dt_override`` pins it (harness use); ``dt_cap``
    shortens it so a run can land exactly on its final time.  When the
    local speeds outgrow the frozen reference by more than ``mu_retry`` the
    whole macro step restarts from t with half the step.
    """
    if not np.all(np.isfinite(U)):
        raise SolverError("non-finite state entering a macro step")
    tau = params.resolve_tau(tri)
    part = getattr(tri, "_levels", None)
    if part is None or force_uniform_level:
        part = assign_levels(tri, force_uniform=force_uniform_level)
        if not force_uniform_level:
            tri._levels = part

    # frozen reference speed and step, from the state at t; the same pass
    # serves as the first stage of every group's first substep
    recon0 = reconstruct(tri, bathy, U, tau, params.eps, params.kappa_dry)
    ev0 = edge_point_values(tri, bathy, recon0)
    a_in0, a_out0 = local_speeds(ev0.h_in, ev0.u_in, ev0.v_in,
                                 ev0.h_out, ev0.u_out, ev0.v_out,
                                 tri.e_nx, tri.e_ny, params.g)
    H0 = edge_flux(ev0.w_in, ev0.h_in, ev0.u_in, ev0.v_in,
                   ev0.w_out, ev0.h_out, ev0.u_out, ev0.v_out,
                   a_in0, a_out0, tri.e_len, tri.e_nx, tri.e_ny,
                   params.g, params.sigma_flux)
    speeds0 = np.maximum(a_in0, a_out0)
    a_max = float(speeds0.max())
    dt_ref = reference_dt(tri, a_max, params) if dt_override is None else dt_override
    if dt_cap is not None:
        dt_ref = min(dt_ref, dt_cap)
    cache0 = (recon0, H0, speeds0)

    for attempt in range(params.max_retries + 1):
        try:
            U_new, stats = _advance(tri, bathy, U, t, dt_ref, a_max, params,
                                    tau, part, cache0)
            stats.retries = attempt
            stats.a_max = a_max
            return U_new, t + dt_ref, stats
        except _MacroRetry:
            dt_ref *= 0.5
            logger.debug("macro step retry %d at t=%.6g, dt=%.3e",
                         attempt + 1, t, dt_ref)
    raise SolverError(f"macro step at t={t:.6g} failed after "
                      f"{params.max_retries} retries")


def _advance(tri, bathy, U0, t, dt_ref, a_max, params, tau, part, cache0=None):
    stats = MacroStats(dt=dt_ref)
    t_end = t + dt_ref
    U = U0.copy()
    groups = part.groups
    ng = len(groups)
    clocks = np.full(ng, t)
    first = [True] * ng
    hist_t = [[t] for _ in range(ng)]
    hist_v = [[U0[g.cells].copy()] for g in groups]
    multirate = ng > 1
    if multirate:
        applied = [np.zeros((g.cross.size, 3)) for g in groups]

    guard = 0
    while np.any(clocks < t_end):
        guard += 1
        if guard > 100000:
            raise SolverError("level scheduler failed to reach the macro time")
        gi = int(np.lexsort((np.arange(ng), np.where(clocks < t_end, clocks,
                                                     np.inf)))[0])
        g = groups[gi]
        t_l = clocks[gi]

        # virtual state at t_l: groups ahead interpolate their history
        V = U.copy()
        if multirate:
            for gj, og in enumerate(groups):
                if gj != gi and clocks[gj] > t_l:
                    V[og.cells] = _interp_history(hist_t[gj], hist_v[gj], t_l)

        if first[gi] and cache0 is not None:
            # every group's first substep starts from the macro-start state,
            # whose reconstruction and fluxes were already computed
            recon, H0, speeds0 = cache0
            H_full = H0
            speeds = speeds0[g.edges2]
            first[gi] = False
        else:
            first[gi] = False
            recon, H_full, speeds = _stage_fluxes(tri, bathy, V, params, tau,
                                                  g, "sA")
        mu = 1.0
        if a_max > params.sigma_flux and g.edges.size:
            sub = np.searchsorted(g.edges2, g.edges)
            mu = float(speeds[sub].max()) / a_max
            if mu > params.mu_retry:
                raise _MacroRetry
        dt_l = local_dt(g.level, dt_ref, mu)
        remaining = t_end - t_l
        landing = False
        if dt_l * 1.05 >= remaining:
            # stretch up to 5% to land; the 0.9 CFL margin absorbs it
            dt_l = remaining
            landing = True
        elif dt_l >= 0.5 * remaining:
            # split the remainder so the final substep never degenerates
            dt_l = 0.5 * remaining
        if dt_l <= 1e-13 * dt_ref:
            raise SolverError("vanishing local time step")

        U_base = U[g.cells].copy()
        U1, dtjk_a = _stage_update(tri, bathy, V, V, params, tau, dt_l,
                                   g, H_full, recon, stats, "sA")

        # stage 2 re-evaluates everything from the stage-1 state
        V2 = U.copy()
        t2 = t_l + dt_l
        if multirate:
            for gj, og in enumerate(groups):
                if gj != gi and clocks[gj] > t_l:
                    V2[og.cells] = _interp_history(hist_t[gj], hist_v[gj], t2)
        V2[g.cells] = U1
        recon2, H_full2, _sp = _stage_fluxes(tri, bathy, V2, params, tau, g, "sB")
        R1, dtjk_b = _stage_update(tri, bathy, V2, V2, params, tau, dt_l,
                                   g, H_full2, recon2, stats, "sB")
        U_sub = 0.5 * (U_base + R1)

        h_after = U_sub[:, 0] - bathy.b_cell[g.cells]
        stats.min_h_raw = min(stats.min_h_raw, float(h_after.min()))
        tiny = h_after < 0.0
        if np.any(tiny):
            U_sub[tiny, 0] = bathy.b_cell[g.cells][tiny]
            stats.dry_snaps += int(tiny.sum())
        stats.min_h = min(stats.min_h, float(np.maximum(h_after, 0.0).min()))

        if multirate and g.cross.size:
            applied[gi] += 0.5 * (dtjk_a[g.cross, None] * H_full[g.cross]
                                  + dtjk_b[g.cross, None] * H_full2[g.cross])

        U[g.cells] = U_sub
        clocks[gi] = t_end if landing else t_l + dt_l
        hist_t[gi].append(clocks[gi])
        hist_v[gi].append(U_sub.copy())
        stats.substeps += 1

    if multirate:
        _reflux(tri, bathy, U, part, groups, applied, stats)
    return U, stats


def _reflux(tri, bathy, U, part, groups, applied, stats):
    """Make the coarse side of every cross-level edge adopt the fine totals."""
    levels = part.levels
    fine_tot = {}
    coarse_tot = {}
    for gi, g in enumerate(groups):
        for j, e in enumerate(g.cross):
            owner_lev = levels[tri.e_cell[e]]
            other_lev = levels[tri.e_other[e]]
            fine_side = g.level == max(owner_lev, other_lev)
            (fine_tot if fine_side else coarse_tot)[int(e)] = applied[gi][j]
    for e, D_fine in fine_tot.items():
        D_coarse = coarse_tot.get(e)
        if D_coarse is None:
            continue
        owner_lev = levels[tri.e_cell[e]]
        other_lev = levels[tri.e_other[e]]
        if owner_lev < other_lev:
            c, sign = tri.e_cell[e], 1.0
        else:
            c, sign = tri.e_other[e], -1.0
        U[c] -= sign * (D_fine - D_coarse) / tri.area[c]

    # the correction can overdraw a nearly dry coarse cell by a hair; pull
    # the shortfall back from the wetter fine neighbors, mass neutrally
    hbar = U[:, 0] - bathy.b_cell
    short = np.flatnonzero(hbar < 0.0)
    for c in short:
        if hbar[c] < -1e-8 * max(1.0, float(np.abs(U[:, 0]).max())):
            raise SolverError(f"refluxing drove cell {c} negative: {hbar[c]:.3e}")
        need = -hbar[c] * tri.area[c]
        nbrs = tri.neighbor[c]
        nbrs = nbrs[nbrs >= 0]
        credit = np.maximum(U[nbrs, 0] - bathy.b_cell[nbrs], 0.0) * tri.area[nbrs]
        total = credit.sum()
        if total < need:
            raise SolverError(f"cannot rebalance dry cell {c} after refluxing")
        U[nbrs, 0] -= (need * credit / total) / tri.area[nbrs]
        U[c, 0] = bathy.b_cell[c]
        stats.reflux_borrows += 1
