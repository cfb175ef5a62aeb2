import numpy as np
import pytest

from triswe.amr import MeshHierarchy, adapt, project_state
from triswe.bathymetry import Bathymetry, build_bathymetry, refine_bathymetry
from triswe.mesh import uniform_mesh
from triswe.reconstruction import reconstruct
from triswe.timestepping import (
    SolverError,
    SolverParams,
    apply_boundary_conditions,
    assign_levels,
    draining_dt,
    evolve_macro_step,
    local_dt,
    reference_dt,
)
from triswe.wlr import REFINE

P = SolverParams(g=1.0, eps=1e-4, manning_n=0.0)


def lake(tri, w=1.0, hu=0.0, hv=0.0):
    U = np.zeros((tri.num_cells, 3))
    U[:, 0] = w
    U[:, 1] = hu
    U[:, 2] = hv
    return U


def two_level_setup(nx=8, ny=8, refine_box=0.5, domain=(0, 1, 0, 1),
                    bottom=None):
    """Base mesh with the left part refined once; returns (hier, tri, bathy)."""
    base = uniform_mesh(domain, nx, ny)
    h = MeshHierarchy(base, max_level=1)
    snap0 = h.snapshot()
    bvals = (np.zeros(len(h.vx)) if bottom is None
             else bottom(np.asarray(h.vx), np.asarray(h.vy)))
    flags = np.zeros(snap0.num_cells, dtype=np.int8)
    flags[snap0.cx < refine_box] = REFINE
    b0 = Bathymetry(snap0, bvals[snap0.vertex_map])
    r = reconstruct(snap0, b0, lake(snap0), 1e-6, 1e-4, 1e-12)
    snap1 = adapt(h, flags, r, bvals)
    bvals = refine_bathymetry(bvals, h.consume_origins(), len(h.vx))
    bathy = Bathymetry(snap1, bvals[snap1.vertex_map])
    return h, snap1, bathy


# -- reference dt and levels ---------------------------------------------------

def test_reference_dt_formula():
    t = uniform_mesh((0, 1, 0, 1), 4, 4)
    r = float(t.altitude.min(axis=1).max())
    assert reference_dt(t, 1.0, P) == pytest.approx(0.15 * r)


def test_reference_dt_dry_fallback():
    t = uniform_mesh((0, 1, 0, 1), 4, 4)
    assert reference_dt(t, 0.0, P) == P.dt_max


def test_levels_uniform_mesh_all_zero():
    t = uniform_mesh((0, 2, 0, 1), 6, 6)
    part = assign_levels(t)
    assert np.all(part.levels == 0)
    assert len(part.groups) == 1


def test_levels_ratio_thresholds():
    # cells with half/third the altitude land on levels 1 and 2
    base = uniform_mesh((0, 1, 0, 1), 2, 2)
    h = MeshHierarchy(base, max_level=1)
    h.refine_red(0)
    h.close_hanging_nodes()
    snap = h.snapshot()
    part = assign_levels(snap)
    m = snap.cell_m
    assert np.all(part.levels[m == 1] >= 1)  # red children halve the altitude
    # untouched base cells stay on level 0 (green closures may not)
    base_cells = [i for i, n in enumerate(snap.node_ids) if h.node_kind[n] == 0]
    assert np.all(part.levels[base_cells] == 0)


def test_local_dt_clamping():
    assert local_dt(1, 1.0, 1.0) == 0.5
    assert local_dt(0, 1.0, 2.0) == 0.5
    assert local_dt(1, 1.0, 0.5) == 0.5  # mu below 1 never stretches the step


def test_draining_classes():
    t = uniform_mesh((0, 1, 0, 1), 2, 2)
    b = build_bathymetry(t, lambda x, y: np.zeros_like(x))
    U = lake(t, 1.0)
    r = reconstruct(t, b, U, 1e-6, 1e-4, 1e-12)
    H1 = np.ones(t.num_edges)  # arbitrary positive mass fluxes
    cells = np.arange(t.num_cells)
    hbar = U[:, 0] - b.b_cell
    dr = draining_dt(t, r.wet, hbar, H1, 0.25, cells)
    assert np.all(dr == 0.25)  # fully flooded: the local step itself

    Udry = lake(t, 0.0)
    rd = reconstruct(t, b, Udry, 1e-6, 1e-4, 1e-12)
    dr = draining_dt(t, rd.wet, Udry[:, 0] - b.b_cell, H1, 0.25, cells)
    assert np.all(dr == 0.0)


def test_boundary_condition_ghosts():
    t = uniform_mesh((0, 1, 0, 1), 3, 3, boundary={
        "left": "wall", "right": "extrapolate", "top": "neumann",
        "bottom": "wall"})
    b = build_bathymetry(t, lambda x, y: np.zeros_like(x))
    U = lake(t, 1.0, hu=0.3, hv=0.1)
    r = reconstruct(t, b, U, 1e-6, 1e-4, 1e-12)
    eids, w, hh, u, v = apply_boundary_conditions(t, b, r)
    assert eids.size > 0
    for i, e in enumerate(eids):
        tag = t.e_btag[e]
        if tag in (1, 4):
            assert u[i] == pytest.approx(0.3, abs=1e-12)
        elif tag == 3:
            nx, ny = t.e_nx[e], t.e_ny[e]
            assert u[i] * nx + v[i] * ny == pytest.approx(
                -(0.3 * nx + 0.1 * ny), abs=1e-12)


# -- macro step ----------------------------------------------------------------

def test_lake_at_rest_macro_step_is_steady():
    t = uniform_mesh((0, 2, 0, 1), 8, 8)
    b = build_bathymetry(
        t, lambda x, y: 0.5 * np.exp(-25 * (x - 1) ** 2 - 50 * (y - 0.5) ** 2))
    U = lake(t, 1.0)
    U2, t1, stats = evolve_macro_step(t, b, U, 0.0, P)
    assert np.max(np.abs(U2[:, 0] - 1.0)) <= 1e-13
    assert np.max(np.abs(U2[:, 1:])) <= 1e-13
    assert stats.min_h >= 0.0


def test_all_dry_state_unchanged():
    t = uniform_mesh((0, 1, 0, 1), 4, 4)
    b = build_bathymetry(t, lambda x, y: 0.2 + 0.1 * x)
    U = np.zeros((t.num_cells, 3))
    U[:, 0] = b.b_cell
    U2, t1, stats = evolve_macro_step(t, b, U, 0.0, P)
    assert np.array_equal(U2, U)
    assert t1 == P.dt_max  # dry fallback step


def test_uniform_flow_flat_bottom_is_steady():
    t = uniform_mesh((0, 2, 0, 1), 8, 4)
    b = build_bathymetry(t, lambda x, y: np.zeros_like(x))
    U = lake(t, 1.0, hu=0.3)
    U2, _, _ = evolve_macro_step(t, b, U, 0.0, P)
    assert np.max(np.abs(U2 - U)) <= 1e-12


def test_single_level_mesh_takes_one_substep():
    t = uniform_mesh((0, 1, 0, 1), 5, 5)
    b = build_bathymetry(t, lambda x, y: np.zeros_like(x))
    U = lake(t, 1.0)
    _, _, stats = evolve_macro_step(t, b, U, 0.0, P)
    assert stats.substeps == 1


def test_two_levels_substep_counts():
    h, tri, bathy = two_level_setup()
    U = lake(tri, 1.0)
    _, _, stats = evolve_macro_step(tri, bathy, U, 0.0, P)
    part = assign_levels(tri)
    # level 0 advances once, each finer level twice per parent step
    expected = sum(2 ** g.level for g in part.groups)
    assert stats.substeps == expected


def test_synchronization_lands_exactly():
    h, tri, bathy = two_level_setup()
    rng = np.random.default_rng(3)
    U = lake(tri, 1.0)
    U[:, 0] += 0.01 * np.exp(-30 * ((tri.cx - 0.5) ** 2 + (tri.cy - 0.5) ** 2))
    t0 = 0.125
    U2, t1, stats = evolve_macro_step(tri, bathy, U, t0, P)
    assert t1 == t0 + stats.dt  # same floating value, no residue


def test_mass_conserved_across_levels_with_walls():
    walls = {"left": "wall", "right": "wall", "top": "wall", "bottom": "wall"}
    base = uniform_mesh((0, 1, 0, 1), 8, 8, boundary=walls)
    h = MeshHierarchy(base, max_level=1)
    snap0 = h.snapshot()
    flags = np.zeros(snap0.num_cells, dtype=np.int8)
    flags[snap0.cx < 0.5] = REFINE
    bvals = np.zeros(len(h.vx))
    b0 = Bathymetry(snap0, bvals[snap0.vertex_map])
    r = reconstruct(snap0, b0, lake(snap0), 1e-6, 1e-4, 1e-12)
    tri = adapt(h, flags, r, bvals)
    bvals = refine_bathymetry(bvals, h.consume_origins(), len(h.vx))
    bathy = Bathymetry(tri, bvals[tri.vertex_map])

    U = lake(tri, 1.0)
    U[:, 0] += 0.1 * np.exp(-40 * ((tri.cx - 0.5) ** 2 + (tri.cy - 0.5) ** 2))
    mass0 = (tri.area * (U[:, 0] - bathy.b_cell)).sum()
    t = 0.0
    for _ in range(5):
        U, t, stats = evolve_macro_step(tri, bathy, U, t, P)
    mass1 = (tri.area * (U[:, 0] - bathy.b_cell)).sum()
    assert mass1 == pytest.approx(mass0, rel=1e-12)


def test_multirate_matches_single_rate_at_second_order():
    # one macro step of the multirate scheme vs the same mesh advanced with
    # the fine step everywhere; the difference contracts by ~4 per halving
    h, tri, bathy = two_level_setup(nx=8, ny=8)
    U0 = lake(tri, 1.0)
    U0[:, 0] += 0.05 * np.exp(-30 * ((tri.cx - 0.55) ** 2 + (tri.cy - 0.5) ** 2))

    def diff_for(dt):
        Um, _, _ = evolve_macro_step(tri, bathy, U0, 0.0, P, dt_override=dt)
        Us = U0
        for i in range(2):
            Us, _, _ = evolve_macro_step(tri, bathy, Us, i * dt / 2, P,
                                         dt_override=dt / 2,
                                         force_uniform_level=True)
        return np.abs(Um - Us).max()

    dt0 = 0.3 * reference_dt(tri, 1.0, P)
    d1 = diff_for(dt0)
    d2 = diff_for(dt0 / 2)
    ratio = d1 / d2
    assert 3.5 <= ratio <= 4.5


def test_cfl_respected_every_substep():
    h, tri, bathy = two_level_setup(nx=6, ny=6)
    U = lake(tri, 1.0)
    U[:, 0] += 0.2 * np.exp(-30 * ((tri.cx - 0.5) ** 2 + (tri.cy - 0.5) ** 2))
    U2, _, stats = evolve_macro_step(tri, bathy, U, 0.0, P)
    part = assign_levels(tri)
    for g in part.groups:
        r_min = tri.altitude[g.cells].min()
        # the level step never exceeds the scaled CFL bound at frozen speeds
        assert local_dt(g.level, stats.dt, 1.0) <= \
            P.cfl_safety * r_min / (6 * stats.a_max) * (1 + 1e-12) * 2


def test_instability_aborts_with_solver_error():
    t = uniform_mesh((0, 1, 0, 1), 3, 3)
    b = build_bathymetry(t, lambda x, y: np.zeros_like(x))
    U = lake(t, 1.0)
    U[0, 0] = np.nan
    with pytest.raises(SolverError, match="non-finite"):
        evolve_macro_step(t, b, U, 0.0, P)
