"""Continuous piecewise-linear bottom topography on a triangulation.

The bottom is carried as one value per mesh vertex; on each cell the surface
is the unique plane through its three vertex values, so it is continuous
across edges and exactly integrable.  Vertex values are sampled from the
analytic bottom only once on the coarsest mesh; refinement inserts values by
linear interpolation along the parent edges, which leaves the surface
unchanged as a function of (x, y) across mesh generations.
"""

from __future__ import annotations

import numpy as np


class Bathymetry:
    """Bottom surface bound to one Triangulation generation.

    Attributes:
        vhat: bottom elevation per mesh vertex.
        b_cell: plane value at the centroid, exactly mean of the 3 vertices.
        b_edge: plane value at edge midpoints, exactly mean of 2 endpoints.
        bx, by: per-cell plane gradient.
        vmax_cell / vmin_cell: max/min vertex value per cell.
    """

    def __init__(self, tri, vhat):
        vhat = np.ascontiguousarray(vhat, dtype=np.float64)
        if vhat.shape != (tri.num_vertices,):
            raise ValueError("vertex table does not match the triangulation")
        if not np.all(np.isfinite(vhat)):
            raise ValueError("non-finite bottom sample")
        self.tri = tri
        self.vhat = vhat
        bv = vhat[tri.tri]                       # (nc, 3)
        self.b_vertex = bv
        self.b_cell = bv.mean(axis=1)
        # midpoint of edge k (opposite vertex k) averages the other two values
        self.b_edge = 0.5 * (bv[:, [1, 2, 0]] + bv[:, [2, 0, 1]])
        self.vmax_cell = bv.max(axis=1)
        self.vmin_cell = bv.min(axis=1)

        x = tri.vx[tri.tri]
        y = tri.vy[tri.tri]
        f10 = bv[:, 1] - bv[:, 0]
        f20 = bv[:, 2] - bv[:, 0]
        x10, y10 = x[:, 1] - x[:, 0], y[:, 1] - y[:, 0]
        x20, y20 = x[:, 2] - x[:, 0], y[:, 2] - y[:, 0]
        det = x10 * y20 - y10 * x20              # = 2*area > 0
        self.bx = (f10 * y20 - f20 * y10) / det
        self.by = (f20 * x10 - f10 * x20) / det
        self.e_b = self.b_edge[tri.e_cell, tri.e_k]

    def at_points(self, cells, x, y):
        """Evaluate the surface at points known to lie in the given cells."""
        return (self.b_cell[cells]
                + self.bx[cells] * (x - self.tri.cx[cells])
                + self.by[cells] * (y - self.tri.cy[cells]))


def build_bathymetry(tri, bottom):
    """Sample an analytic bottom (or accept a per-vertex table) on a mesh.

    Args:
        tri: Triangulation.
        bottom: callable ``b(x, y)`` evaluated at the vertices, or an array
            of per-vertex values.
    """
    if callable(bottom):
        vhat = np.asarray(bottom(tri.vx, tri.vy), dtype=np.float64)
        vhat = np.broadcast_to(vhat, tri.vx.shape).copy()
    else:
        vhat = np.asarray(bottom, dtype=np.float64)
    return Bathymetry(tri, vhat)


def refine_bathymetry(vhat, origins, new_size):
    """Extend a vertex table to newly created vertices.

    Args:
        vhat: existing table (values for vertices 0..len(vhat)-1).
        origins: iterable of (vid, va, vb, t) records; the new vertex ``vid``
            lies at parameter ``t`` along the edge from ``va`` to ``vb``.
            Records must be ordered so parents precede children.
        new_size: total vertex count after refinement.

    Returns:
        The extended table; existing entries are preserved bit for bit.
    """
    out = np.empty(new_size, dtype=np.float64)
    out[:len(vhat)] = vhat
    for vid, va, vb, t in origins:
        if va >= vid or vb >= vid:
            raise ValueError(f"vertex {vid} created from later vertices")
        if t == 0.5:
            out[vid] = 0.5 * (out[va] + out[vb])
        else:
            out[vid] = (1.0 - t) * out[va] + t * out[vb]
    return out
