"""Physical fluxes, one-sided speeds, central-upwind edge fluxes, the
well-balanced source quadrature and Manning friction.

Edge fluxes are evaluated once per unique edge in the owner orientation and
scattered to both cells with opposite signs, so interior contributions
cancel bit for bit when the update is assembled.  Momentum fluxes use the
h*u*u form with desingularized velocities instead of (hu)^2/h, which is
identical for healthy depths and finite at wetting fronts.
"""

from __future__ import annotations

import numpy as np

from .reconstruction import desingularized_velocity


def physical_flux_f(w, hu, hv, b, g, tau, eps):
    """x-direction flux from conserved values; h and velocities derived."""
    h = np.maximum(np.asarray(w) - b, 0.0)
    u = desingularized_velocity(h, hu, tau, eps)
    v = desingularized_velocity(h, hv, tau, eps)
    return flux_f(h, u, v, g)


def physical_flux_g(w, hu, hv, b, g, tau, eps):
    """y-direction flux from conserved values; h and velocities derived."""
    h = np.maximum(np.asarray(w) - b, 0.0)
    u = desingularized_velocity(h, hu, tau, eps)
    v = desingularized_velocity(h, hv, tau, eps)
    return flux_g(h, u, v, g)


def flux_f(h, u, v, g):
    hu = h * u
    return np.stack([hu, hu * u + 0.5 * g * h * h, hu * v], axis=-1)


def flux_g(h, u, v, g):
    hv = h * v
    return np.stack([hv, hv * u, hv * v + 0.5 * g * h * h], axis=-1)


def local_speeds(h_in, u_in, v_in, h_out, u_out, v_out, nx, ny, g):
    """One-sided propagation speeds along the outward normal, clamped at 0."""
    c_in = np.sqrt(g * h_in)
    c_out = np.sqrt(g * h_out)
    un_in = nx * u_in + ny * v_in
    un_out = nx * u_out + ny * v_out
    a_out = np.maximum(np.maximum(un_in + c_in, un_out + c_out), 0.0)
    a_in = -np.minimum(np.minimum(un_in - c_in, un_out - c_out), 0.0)
    return a_in, a_out


def edge_flux(w_in, h_in, u_in, v_in, w_out, h_out, u_out, v_out,
              a_in, a_out, length, nx, ny, g, sigma_flux):
    """Central-upwind flux through an edge, in the owner orientation.

    The inner state takes the a_out weight and the outer state the a_in
    weight; the diffusion term acts on (w, hu, hv).  When the combined speed
    drops below ``sigma_flux`` the arithmetic-average flux is used instead.
    """
    h_in, u_in, v_in = np.asarray(h_in), np.asarray(u_in), np.asarray(v_in)
    h_out, u_out, v_out = np.asarray(h_out), np.asarray(u_out), np.asarray(v_out)
    w_in, w_out = np.asarray(w_in), np.asarray(w_out)
    length, nx, ny = np.asarray(length), np.asarray(nx), np.asarray(ny)
    f_in = flux_f(h_in, u_in, v_in, g)
    f_out = flux_f(h_out, u_out, v_out, g)
    g_in = flux_g(h_in, u_in, v_in, g)
    g_out = flux_g(h_out, u_out, v_out, g)

    asum = np.asarray(a_in + a_out)
    live = asum >= sigma_flux
    asafe = np.where(live, asum, 1.0)

    du = np.stack([w_out - w_in,
                   h_out * u_out - h_in * u_in,
                   h_out * v_out - h_in * v_in], axis=-1)
    wa_in = (a_in / asafe)[..., None]
    wa_out = (a_out / asafe)[..., None]
    upwind = ((nx * length)[..., None] * (wa_in * f_out + wa_out * f_in)
              + (ny * length)[..., None] * (wa_in * g_out + wa_out * g_in)
              - (length * a_in * a_out / asafe)[..., None] * du)
    average = 0.5 * ((nx * length)[..., None] * (f_in + f_out)
                     + (ny * length)[..., None] * (g_in + g_out))
    return np.where(live[..., None], upwind, average)


def source_quadrature(tri, bathy, recon, ratios, g, sel=None):
    """Well-balanced cell averages of the momentum source terms.

    The edge part mirrors the hydrostatic flux contributions, each weighted
    by the same draining ratio dt_jk/dt the update applies to the flux; the
    vertex part uses the corrected surface values and per-vertex slopes so
    the two cancel exactly on lake-at-rest data.

    Args:
        ratios: (n, 3) draining ratios for the cells in ``sel``.
    """
    if sel is None:
        sel = np.arange(tri.num_cells)
    h_edge = recon.h_edge[sel]
    edge_w = tri.edge_len[sel] * ratios * h_edge * h_edge
    pref = g / (2.0 * tri.area[sel])
    s2 = pref * (edge_w * tri.edge_nx[sel]).sum(axis=1)
    s3 = pref * (edge_w * tri.edge_ny[sel]).sum(axis=1)

    hv = recon.w_vertex[sel] - bathy.b_vertex[sel]
    s2 -= (g / 3.0) * (hv * recon.sx_vertex[sel]).sum(axis=1)
    s3 -= (g / 3.0) * (hv * recon.sy_vertex[sel]).sum(axis=1)
    return s2, s3


def manning_friction(h, hu, hv, n_b, g, dt, eps):
    """Semi-implicit Manning friction factor on the momenta.

    The factor never increases the momentum magnitude or flips its sign and
    is the identity when ``n_b == 0``; depths at or below the cutoff lose
    their momentum entirely (consistent with the velocity desingularization).
    """
    if n_b == 0.0:
        return hu, hv
    h = np.asarray(h, dtype=np.float64)
    wet = h > eps
    hsafe = np.where(wet, h, 1.0)
    u = np.where(wet, hu / hsafe, 0.0)
    v = np.where(wet, hv / hsafe, 0.0)
    gamma = g * n_b * n_b * np.hypot(u, v) / hsafe ** (4.0 / 3.0)
    factor = np.where(wet, 1.0 / (1.0 + dt * gamma), 0.0)
    return hu * factor, hv * factor
