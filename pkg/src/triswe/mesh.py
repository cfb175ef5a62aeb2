"""Unstructured triangular meshes and the per-cell/per-edge geometry they carry.

A :class:`Triangulation` is an immutable snapshot: vertex coordinates, cell
connectivity (counterclockwise), areas, centroids, and for each of the three
edges of every cell its length, midpoint, outward unit normal, altitude,
neighbor and boundary tag.  Edge ``k`` of a cell is the edge opposite vertex
``k``.  Interior edges are additionally collected into a unique-edge table so
flux kernels compute each edge exactly once.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

# boundary condition tags used in mesh files and per-edge tag arrays
BC_INTERIOR = 0
BC_EXTRAPOLATE = 1
BC_PERIODIC = 2
BC_WALL = 3
BC_NEUMANN = 4

BC_NAMES = {
    "interior": BC_INTERIOR,
    "extrapolate": BC_EXTRAPOLATE,
    "periodic": BC_PERIODIC,
    "wall": BC_WALL,
    "neumann": BC_NEUMANN,
}


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class Triangulation:
    """Immutable triangular mesh snapshot with derived geometry.

    Attributes:
        vx, vy: vertex coordinates, shape (nv,).
        tri: cell vertex ids, shape (nc, 3), counterclockwise.
        area, cx, cy: cell areas and centroids.
        edge_len, edge_mx, edge_my: per cell-edge length and midpoint.
        edge_nx, edge_ny: outward unit normal components (cos, sin of the
            normal angle; stored as the vector to avoid trig round trips).
        altitude: per cell-edge altitude, 2*area/edge_len.
        neighbor: neighboring cell id per edge, -1 on the boundary.
        neighbor_edge: the matching edge index inside the neighbor.
        btag: boundary tag per cell-edge (0 on interior edges).
        e_cell, e_k, e_other, e_ko, e_btag: unique-edge table (owner side is
            the lower cell id; e_other is -1 on boundary edges).
        cell_edge_id, cell_edge_sign: map (cell, k) to its unique edge and
            the orientation sign (+1 owner, -1 neighbor side).
    """

    def __init__(self, vx, vy, tri, btag, generation=0, strict_boundary=False):
        self.vx = np.ascontiguousarray(vx, dtype=np.float64)
        self.vy = np.ascontiguousarray(vy, dtype=np.float64)
        self.tri = np.ascontiguousarray(tri, dtype=np.int64)
        self.btag = np.ascontiguousarray(btag, dtype=np.int8)
        self.generation = generation
        self.strict_boundary = strict_boundary
        self.num_vertices = self.vx.shape[0]
        self.num_cells = self.tri.shape[0]
        self._derive_geometry()
        self._derive_edges()
        self._derive_vertex_incidence()
        self._periodic_partners()

    # -- construction helpers ------------------------------------------------

    def _derive_geometry(self):
        p = np.stack([self.vx[self.tri], self.vy[self.tri]], axis=-1)  # (nc,3,2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed <= 0.0):
            bad = int(np.argmin(signed))
            raise MeshError(f"cell {bad} is not counterclockwise or degenerate "
                            f"(signed area {signed[bad]:.3e})")
        self.area = signed
        self.cx = p[:, :, 0].mean(axis=1)
        self.cy = p[:, :, 1].mean(axis=1)

        # edge k is opposite vertex k, directed v[k+1] -> v[k+2] (ccw loop)
        a = p[:, [1, 2, 0], :]
        b = p[:, [2, 0, 1], :]
        d = b - a
        self.edge_len = np.hypot(d[:, :, 0], d[:, :, 1])
        self.edge_mx = 0.5 * (a[:, :, 0] + b[:, :, 0])
        self.edge_my = 0.5 * (a[:, :, 1] + b[:, :, 1])
        # outward normal of a ccw boundary edge is the direction rotated -90deg
        self.edge_nx = d[:, :, 1] / self.edge_len
        self.edge_ny = -d[:, :, 0] / self.edge_len
        self.altitude = 2.0 * self.area[:, None] / self.edge_len

        self.xmin, self.xmax = float(self.vx.min()), float(self.vx.max())
        self.ymin, self.ymax = float(self.vy.min()), float(self.vy.max())

    def _derive_edges(self):
        nc = self.num_cells
        va = self.tri[:, [1, 2, 0]].ravel()
        vb = self.tri[:, [2, 0, 1]].ravel()
        lo = np.minimum(va, vb)
        hi = np.maximum(va, vb)
        key = lo * np.int64(self.num_vertices) + hi
        order = np.argsort(key, kind="stable")
        sk = key[order]
        ne_start = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
        counts = np.diff(np.r_[ne_start, sk.size])
        if np.any(counts > 2):
            bad = order[ne_start[np.argmax(counts > 2)]]
            raise MeshError(f"non-manifold edge shared by >2 cells near cell {bad // 3}")

        ne = ne_start.size
        cells = order // 3
        ks = order % 3

        self.neighbor = np.full((nc, 3), -1, dtype=np.int64)
        self.neighbor_edge = np.full((nc, 3), -1, dtype=np.int8)
        self.cell_edge_id = np.empty((nc, 3), dtype=np.int64)
        self.cell_edge_sign = np.empty((nc, 3), dtype=np.int8)

        e_cell = np.empty(ne, dtype=np.int64)
        e_k = np.empty(ne, dtype=np.int8)
        e_other = np.full(ne, -1, dtype=np.int64)
        e_ko = np.full(ne, -1, dtype=np.int8)

        first = ne_start
        c0, k0 = cells[first], ks[first]
        e_cell[:] = c0
        e_k[:] = k0
        self.cell_edge_id[c0, k0] = np.arange(ne)
        self.cell_edge_sign[c0, k0] = 1

        second_mask = counts == 2
        idx2 = first[second_mask] + 1
        c1, k1 = cells[idx2], ks[idx2]
        eids = np.flatnonzero(second_mask)
        # owner is the lower cell id for a deterministic orientation
        swap = c1 < e_cell[eids]
        ec, ek = e_cell[eids].copy(), e_k[eids].copy()
        e_cell[eids] = np.where(swap, c1, ec)
        e_k[eids] = np.where(swap, k1, ek)
        e_other[eids] = np.where(swap, ec, c1)
        e_ko[eids] = np.where(swap, ek, k1)
        self.cell_edge_id[c1, k1] = eids
        self.cell_edge_sign[c1, k1] = 1
        self.cell_edge_sign[e_other[eids], e_ko[eids]] = -1
        self.cell_edge_sign[e_cell[eids], e_k[eids]] = 1

        self.neighbor[e_cell[eids], e_k[eids]] = e_other[eids]
        self.neighbor_edge[e_cell[eids], e_k[eids]] = e_ko[eids]
        self.neighbor[e_other[eids], e_ko[eids]] = e_cell[eids]
        self.neighbor_edge[e_other[eids], e_ko[eids]] = e_k[eids]

        self.e_cell, self.e_k = e_cell, e_k
        self.e_other, self.e_ko = e_other, e_ko
        self.num_edges = ne

        self.e_btag = np.where(e_other >= 0, np.int8(BC_INTERIOR),
                               self.btag[e_cell, e_k]).astype(np.int8)
        boundary = np.flatnonzero(e_other < 0)
        untagged = boundary[self.e_btag[boundary] == BC_INTERIOR]
        if untagged.size:
            if self.strict_boundary:
                c = e_cell[untagged[0]]
                raise MeshError(f"nonconforming mesh: cell {c} has an untagged "
                                f"single-sided edge (hanging node?)")
            logger.debug("defaulting %d untagged boundary edges to extrapolation",
                         untagged.size)
            self.e_btag[untagged] = BC_EXTRAPOLATE
            self.btag[e_cell[untagged], e_k[untagged]] = BC_EXTRAPOLATE

        # owner-side geometry gathered once for edge kernels
        self.e_len = self.edge_len[e_cell, e_k]
        self.e_nx = self.edge_nx[e_cell, e_k]
        self.e_ny = self.edge_ny[e_cell, e_k]
        self.e_mx = self.edge_mx[e_cell, e_k]
        self.e_my = self.edge_my[e_cell, e_k]

    def _derive_vertex_incidence(self):
        # CSR map vertex -> incident (cell, local corner) pairs
        corners = np.repeat(np.arange(self.num_cells), 3)
        kappas = np.tile(np.arange(3), self.num_cells)
        verts = self.tri.ravel()
        order = np.argsort(verts, kind="stable")
        self.vc_cells = corners[order]
        self.vc_kappa = kappas[order].astype(np.int8)
        self.vc_offsets = np.searchsorted(verts[order], np.arange(self.num_vertices + 1))

    def _periodic_partners(self):
        per = np.flatnonzero(self.e_btag == BC_PERIODIC)
        self.e_partner_cell = np.full(self.num_edges, -1, dtype=np.int64)
        self.e_partner_x = np.zeros(self.num_edges)
        self.e_partner_y = np.zeros(self.num_edges)
        if per.size == 0:
            return
        lx = self.xmax - self.xmin
        ly = self.ymax - self.ymin
        mx, my = self.e_mx[per], self.e_my[per]
        tol = 1e-9 * max(lx, ly)
        on_left = np.abs(mx - self.xmin) < tol
        on_right = np.abs(mx - self.xmax) < tol
        on_bottom = np.abs(my - self.ymin) < tol
        on_top = np.abs(my - self.ymax) < tol
        tx = np.where(on_left, lx, np.where(on_right, -lx, 0.0))
        ty = np.where(on_bottom, ly, np.where(on_top, -ly, 0.0))
        if np.any((tx == 0.0) & (ty == 0.0)):
            raise MeshError("periodic edge not on a straight domain side")
        px, py = mx + tx, my + ty
        # partner is the periodic edge whose segment contains the translated
        # midpoint; resolution may differ across the boundary under AMR, so
        # a fast exact-midpoint lookup falls back to a containment scan
        ax = self.vx[self.tri[self.e_cell[per], (self.e_k[per] + 1) % 3]]
        ay = self.vy[self.tri[self.e_cell[per], (self.e_k[per] + 1) % 3]]
        bx = self.vx[self.tri[self.e_cell[per], (self.e_k[per] + 2) % 3]]
        by = self.vy[self.tri[self.e_cell[per], (self.e_k[per] + 2) % 3]]
        found = np.full(per.size, -1, dtype=np.int64)
        bymid = {}
        for i in range(per.size):
            bymid.setdefault((round(mx[i] / tol), round(my[i] / tol)), i)
        for i in range(per.size):
            hit = bymid.get((round(px[i] / tol), round(py[i] / tol)))
            if hit is not None and hit != i:
                found[i] = hit
                continue
            dx = bx - ax
            dy = by - ay
            t = ((px[i] - ax) * dx + (py[i] - ay) * dy) / (dx * dx + dy * dy)
            off = np.hypot(ax + t * dx - px[i], ay + t * dy - py[i])
            ok = (t > -1e-9) & (t < 1.0 + 1e-9) & (off < tol)
            ok[i] = False
            hits = np.flatnonzero(ok)
            if hits.size == 0:
                raise MeshError("periodic edge without partner")
            found[i] = hits[0]
        self.e_partner_cell[per] = self.e_cell[per[found]]
        self.e_partner_x[per] = px
        self.e_partner_y[per] = py

    # -- queries -------------------------------------------------------------

    @property
    def boundary_edges(self):
        """List of (cell, edge index, boundary tag) for all boundary edges."""
        idx = np.flatnonzero(self.e_other < 0)
        return [(int(self.e_cell[e]), int(self.e_k[e]), int(self.e_btag[e]))
                for e in idx]

    def vertex_cells(self, v):
        """Cells incident to vertex ``v`` (deterministic order)."""
        s, e = self.vc_offsets[v], self.vc_offsets[v + 1]
        return self.vc_cells[s:e]

    def theta(self):
        """Normal angles per cell edge, derived from the stored unit vectors."""
        return np.arctan2(self.edge_ny, self.edge_nx)


def build_triangulation(vertices, elements, boundary_tags=None, generation=0,
                        weld_check=True):
    """Build a Triangulation from raw vertex coordinates and vertex triples.

    Vertex order inside each element is normalized to counterclockwise
    (boundary tags follow the edge-opposite-vertex convention and are
    permuted along).  Unreferenced vertices are dropped with a warning;
    duplicate vertices within 1e-12 of the domain diameter are an error.

    Args:
        vertices: (nv, 2) array-like of coordinates.
        elements: (nc, 3) array-like of vertex ids.
        boundary_tags: optional (nc, 3) per-edge tags, or a dict mapping the
            sorted vertex pair of a boundary edge to a tag.
    """
    verts = np.asarray(vertices, dtype=np.float64)
    tri = np.asarray(elements, dtype=np.int64).copy()
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise MeshError("vertices must be (nv, 2)")
    if tri.ndim != 2 or tri.shape[1] != 3:
        raise MeshError("elements must be (nc, 3)")
    if not np.all(np.isfinite(verts)):
        raise MeshError("non-finite vertex coordinate")
    nv = verts.shape[0]
    if tri.size and (tri.min() < 0 or tri.max() >= nv):
        bad = int(np.argmax((tri < 0) | (tri >= nv)).item() // 3)
        raise MeshError(f"element {bad} references an invalid vertex id")

    if tri.size:
        counts = np.bincount(tri.ravel(), minlength=nv)
        unused = np.flatnonzero(counts == 0)
    else:
        unused = np.arange(nv)
    if unused.size:
        logger.warning("dropping %d unreferenced vertices", unused.size)
        keep = np.flatnonzero(counts > 0)
        remap = np.full(nv, -1, dtype=np.int64)
        remap[keep] = np.arange(keep.size)
        verts = verts[keep]
        tri = remap[tri]
        nv = keep.size

    diam = float(np.hypot(np.ptp(verts[:, 0]) if nv else 0.0,
                          np.ptp(verts[:, 1]) if nv else 0.0)) or 1.0
    if weld_check and nv > 1:
        tol = 1e-12 * diam
        # two points within tol share a cell of size 2*tol in at least one
        # of the four half-shifted quantization grids
        for sx in (0.0, tol):
            for sy in (0.0, tol):
                kx = np.floor((verts[:, 0] + sx) / (2.0 * tol)).astype(np.int64)
                ky = np.floor((verts[:, 1] + sy) / (2.0 * tol)).astype(np.int64)
                order = np.lexsort((ky, kx))
                same = ((kx[order][1:] == kx[order][:-1])
                        & (ky[order][1:] == ky[order][:-1]))
                for i in np.flatnonzero(same):
                    a, b = order[i], order[i + 1]
                    if np.hypot(*(verts[a] - verts[b])) <= tol:
                        raise MeshError(f"duplicate vertices {a} and {b} "
                                        f"within welding tolerance")

    btag = np.zeros((tri.shape[0], 3), dtype=np.int8)
    tag_dict = None
    if boundary_tags is not None:
        if isinstance(boundary_tags, dict):
            tag_dict = boundary_tags
        else:
            btag = np.asarray(boundary_tags, dtype=np.int8).copy()
            if btag.shape != tri.shape:
                raise MeshError("boundary_tags must be (nc, 3)")

    # normalize to ccw; swapping vertices 1,2 permutes edges (0,1,2)->(0,2,1)
    p0 = verts[tri[:, 0]]
    d1 = verts[tri[:, 1]] - p0
    d2 = verts[tri[:, 2]] - p0
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(np.abs(signed) <= 1e-14 * diam * diam):
        bad = int(np.argmin(np.abs(signed)))
        raise MeshError(f"element {bad} has zero area")
    flip = signed < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    btag[flip] = btag[flip][:, [0, 2, 1]]

    if tag_dict is not None:
        for k in range(3):
            va = tri[:, (k + 1) % 3]
            vb = tri[:, (k + 2) % 3]
            for c in range(tri.shape[0]):
                t = tag_dict.get((min(va[c], vb[c]), max(va[c], vb[c])))
                if t is not None:
                    btag[c, k] = t

    return Triangulation(verts[:, 0], verts[:, 1], tri, btag, generation=generation)


def uniform_mesh(domain, nx, ny, boundary=None):
    """Uniform right-triangle mesh: 2*nx*ny congruent cells on a rectangle.

    Every square is split along the lower-left to upper-right diagonal so
    refinement by edge midpoints reproduces the twice-finer uniform mesh.

    Args:
        domain: (x0, x1, y0, y1).
        nx, ny: squares per direction, both >= 1.
        boundary: optional dict with 'left', 'right', 'bottom', 'top' tag
            names or ints; defaults to extrapolation everywhere.
    """
    x0, x1, y0, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate rectangle")
    if nx < 1 or ny < 1:
        raise MeshError("nx, ny must be >= 1")
    tags = {"left": BC_EXTRAPOLATE, "right": BC_EXTRAPOLATE,
            "bottom": BC_EXTRAPOLATE, "top": BC_EXTRAPOLATE}
    if boundary:
        for side, t in boundary.items():
            tags[side] = BC_NAMES[t] if isinstance(t, str) else int(t)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00, v10 = vid(i, j), vid(i + 1, j)
    v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    tri = np.empty((2 * nx * ny, 3), dtype=np.int64)
    tri[0::2] = lower
    tri[1::2] = upper

    btag = np.zeros((tri.shape[0], 3), dtype=np.int8)
    # lower cell (v00,v10,v11): edge 2 on the bottom row, edge 0 on the right
    # column; upper cell (v00,v11,v01): edge 0 on the top row, edge 1 on the
    # left column; the shared diagonal stays interior
    lo = np.arange(0, tri.shape[0], 2)
    up = lo + 1
    btag[lo[j == 0], 2] = tags["bottom"]
    btag[lo[i == nx - 1], 0] = tags["right"]
    btag[up[j == ny - 1], 0] = tags["top"]
    btag[up[i == 0], 1] = tags["left"]
    return build_triangulation(verts, tri, btag, weld_check=False)


def write_mesh(tri, path):
    """Write the node/element text format (``#`` comments allowed)."""
    with open(path, "w") as f:
        f.write(f"{tri.num_vertices} {tri.num_cells}\n")
        for i in range(tri.num_vertices):
            f.write(f"{i} {float(tri.vx[i])!r} {float(tri.vy[i])!r}\n")
        for c in range(tri.num_cells):
            v = tri.tri[c]
            t = tri.btag[c]
            f.write(f"{c} {v[0]} {v[1]} {v[2]} {t[0]} {t[1]} {t[2]}\n")


def read_mesh(path):
    """Read the node/element text format written by :func:`write_mesh`."""
    rows = []
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                rows.append((lineno, line.split()))
    if not rows:
        raise MeshError(f"{path}: empty mesh file")

    def parse(lineno, tok, kind, what):
        try:
            return kind(tok)
        except ValueError:
            raise MeshError(f"{path}:{lineno}: cannot parse {what} from {tok!r}") from None

    lineno, head = rows[0]
    if len(head) != 2:
        raise MeshError(f"{path}:{lineno}: header must be '<num_vertices> <num_cells>'")
    nv = parse(lineno, head[0], int, "vertex count")
    nc = parse(lineno, head[1], int, "cell count")
    if len(rows) != 1 + nv + nc:
        raise MeshError(f"{path}: inconsistent counts, header says {nv}+{nc} "
                        f"records but file has {len(rows) - 1}")

    verts = np.empty((nv, 2))
    for lineno, tok in rows[1:1 + nv]:
        if len(tok) != 3:
            raise MeshError(f"{path}:{lineno}: vertex line needs 'id x y'")
        i = parse(lineno, tok[0], int, "vertex id")
        if not 0 <= i < nv:
            raise MeshError(f"{path}:{lineno}: vertex id {i} out of range")
        verts[i, 0] = parse(lineno, tok[1], float, "x")
        verts[i, 1] = parse(lineno, tok[2], float, "y")

    tri = np.empty((nc, 3), dtype=np.int64)
    btag = np.zeros((nc, 3), dtype=np.int8)
    for lineno, tok in rows[1 + nv:]:
        if len(tok) not in (4, 7):
            raise MeshError(f"{path}:{lineno}: cell line needs 'id v1 v2 v3 "
                            f"[btag1 btag2 btag3]'")
        c = parse(lineno, tok[0], int, "cell id")
        if not 0 <= c < nc:
            raise MeshError(f"{path}:{lineno}: cell id {c} out of range")
        for m in range(3):
            v = parse(lineno, tok[1 + m], int, "vertex id")
            if not 0 <= v < nv:
                raise MeshError(f"{path}:{lineno}: cell {c} references node {v} "
                                f"of {nv}")
            tri[c, m] = v
        if len(tok) == 7:
            for m in range(3):
                btag[c, m] = parse(lineno, tok[4 + m], int, "boundary tag")
    return build_triangulation(verts, tri, btag)
