"""Hierarchical red/green/wet-dry refinement forest and state projection.

The hierarchy owns a growing vertex table and a tree of triangle nodes.
Every edge carries at most one split point, registered the first time any
refinement needs it: regular refinement of a fresh cell splits at exact
midpoints, and a cell whose edge already carries a point (typically left by
an earlier wet/dry split on the other side) reuses it, keeping both sides
conforming without touching the neighbor.

Green (bisection) closures are ephemeral: every adaptation reverts all
active green pairs first and re-creates whichever are still needed from a
cache, so an all-Keep adaptation reproduces the identical active cell set
and persistent hanging nodes never block later refinement.

Projection between generations is exactly conservative: unchanged cells
copy, coarsened cells take area-weighted child averages, refined cells
evaluate the parent's corrected reconstruction (closed-form two-piece
integrals on partially flooded parents), and green/red swaps under one
parent pool the parent's water and redistribute it as a flat fill.
"""

from __future__ import annotations

import heapq
import logging

import numpy as np

from .mesh import BC_INTERIOR, MeshError, Triangulation
from .reconstruction import DRY, FULL, PARTIAL, flooded_volume, solve_flood_level
from .wlr import COARSEN, REFINE

logger = logging.getLogger(__name__)

ROOT, RED, GREEN, WETDRY = 0, 1, 2, 3


class MeshHierarchy:
    """Refinement forest over a base triangulation.

    Nodes are triangles; the active ones tile the domain.  ``snapshot()``
    assembles them into a conforming :class:`Triangulation` carrying
    ``node_ids`` (hierarchy node per cell), ``vertex_map`` (hierarchy vertex
    per snapshot vertex) and ``cell_m`` (refinement depth per cell).
    """

    def __init__(self, base_tri, max_level=1, min_angle_deg=15.0,
                 altitude_ratio=0.1):
        self.max_level = int(max_level)
        self.min_angle = np.radians(min_angle_deg)
        self.altitude_ratio = altitude_ratio

        self.vx = [float(x) for x in base_tri.vx]
        self.vy = [float(y) for y in base_tri.vy]
        self.origins = []          # (vid, va, vb, t) records for new vertices
        self.edge_point = {}       # sorted vertex pair -> (vid, t-from-low-id)

        n = base_tri.num_cells
        self.node_v = [tuple(int(v) for v in base_tri.tri[c]) for c in range(n)]
        self.node_btag = [tuple(int(t) for t in base_tri.btag[c]) for c in range(n)]
        self.node_parent = [-1] * n
        self.node_level = [0] * n
        self.node_kind = [ROOT] * n
        self.node_area = [float(a) for a in base_tri.area]
        self.node_children = {}    # node -> list of red/wetdry children
        self.node_wet = {}         # wetdry child -> True (wet) / False (dry)
        self.green_cache = {}      # (node, point vid) -> (child a, child b)
        self.active_green = {}     # parent node -> (child a, child b, point vid)
        self.node_active = [True] * n
        self.vert_use = {}         # vid -> active reference count
        self.edge_use = {}         # sorted vertex pair -> active nodes using it
        for c in range(n):
            for v in self.node_v[c]:
                self.vert_use[v] = self.vert_use.get(v, 0) + 1
            for key in self._edge_keys(c):
                self.edge_use.setdefault(key, set()).add(c)

        self.generation = 0
        self._snapshot = None

    # -- vertex bookkeeping ----------------------------------------------------

    def _new_vertex(self, va, vb, t):
        vid = len(self.vx)
        if t == 0.5:
            self.vx.append(0.5 * (self.vx[va] + self.vx[vb]))
            self.vy.append(0.5 * (self.vy[va] + self.vy[vb]))
        else:
            self.vx.append((1.0 - t) * self.vx[va] + t * self.vx[vb])
            self.vy.append((1.0 - t) * self.vy[va] + t * self.vy[vb])
        self.origins.append((vid, va, vb, t))
        return vid

    def edge_split_point(self, a, b, t=0.5):
        """Vertex splitting edge (a, b) at parameter t from a, shared by id.

        Each edge carries one split point; an existing point is returned
        regardless of ``t`` unless it is an unused leftover at a different
        parameter, in which case it is replaced.
        """
        key = (a, b) if a < b else (b, a)
        tkey = t if a < b else 1.0 - t
        hit = self.edge_point.get(key)
        if hit is not None:
            vid, told = hit
            if self.vert_use.get(vid, 0) > 0 or told == tkey:
                return vid
            # unused leftover at a different parameter gets replaced
        vid = self._new_vertex(key[0], key[1], tkey)
        self.edge_point[key] = (vid, tkey)
        return vid

    def existing_point(self, a, b):
        key = (a, b) if a < b else (b, a)
        hit = self.edge_point.get(key)
        return hit[0] if hit is not None else None

    # -- node bookkeeping --------------------------------------------------------

    def _add_node(self, verts, btag, parent, level, kind):
        nid = len(self.node_v)
        self.node_v.append(tuple(verts))
        self.node_btag.append(tuple(btag))
        self.node_parent.append(parent)
        self.node_level.append(level)
        self.node_kind.append(kind)
        ax, ay = self.vx[verts[0]], self.vy[verts[0]]
        bx, by = self.vx[verts[1]], self.vy[verts[1]]
        cx, cy = self.vx[verts[2]], self.vy[verts[2]]
        area = 0.5 * ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax))
        if area <= 0.0:
            raise MeshError(f"child node {nid} is degenerate or clockwise")
        self.node_area.append(area)
        self.node_active.append(False)
        return nid

    def _edge_keys(self, n):
        v = self.node_v[n]
        return (tuple(sorted((v[1], v[2]))),
                tuple(sorted((v[2], v[0]))),
                tuple(sorted((v[0], v[1]))))

    def _activate(self, n, log=None):
        if not self.node_active[n]:
            self.node_active[n] = True
            self._snapshot = None
            for v in self.node_v[n]:
                self.vert_use[v] = self.vert_use.get(v, 0) + 1
            for key in self._edge_keys(n):
                self.edge_use.setdefault(key, set()).add(n)
            if log is not None:
                log.add(n)

    def _deactivate(self, n, log=None):
        if self.node_active[n]:
            self.node_active[n] = False
            self._snapshot = None
            for v in self.node_v[n]:
                self.vert_use[v] -= 1
            for key in self._edge_keys(n):
                users = self.edge_use.get(key)
                if users is not None:
                    users.discard(n)
                    if not users:
                        del self.edge_use[key]
            if log is not None:
                log.remove(n)

    def active_nodes(self):
        return [n for n in range(len(self.node_v)) if self.node_active[n]]

    # -- refinement operations ---------------------------------------------------

    def refine_red(self, n, log=None):
        """Split an active triangle into four children via its edge points.

        Fresh edges are split at their midpoints, so children of an
        untouched parent are the four similar midpoint triangles; an edge
        that already carries a shared point is reused as is.
        """
        if not self.node_active[n]:
            raise MeshError(f"node {n} is not active")
        if self.node_kind[n] == GREEN:
            raise MeshError(f"node {n} is a green closure cell")
        if self.node_level[n] >= self.max_level:
            raise MeshError(f"node {n} is at the refinement level cap")
        v = self.node_v[n]
        bt = self.node_btag[n]
        p = [self.edge_split_point(v[(k + 1) % 3], v[(k + 2) % 3]) for k in range(3)]
        expect = ((v[0], p[2], p[1]), (v[1], p[0], p[2]),
                  (v[2], p[1], p[0]), (p[0], p[1], p[2]))
        old_kids = self.node_children.get(n)
        if old_kids is not None and len(old_kids) == 4 and \
                all(self.node_v[c] == e for c, e in zip(old_kids, expect)):
            kids = old_kids   # re-refinement reproduces the identical family
        else:
            m = self.node_level[n] + 1
            kids = [
                self._add_node(expect[0], (BC_INTERIOR, bt[1], bt[2]), n, m, RED),
                self._add_node(expect[1], (BC_INTERIOR, bt[2], bt[0]), n, m, RED),
                self._add_node(expect[2], (BC_INTERIOR, bt[0], bt[1]), n, m, RED),
                self._add_node(expect[3], (BC_INTERIOR,) * 3, n, m, RED),
            ]
            self.node_children[n] = kids
        self._deactivate(n, log)
        for c in kids:
            self._activate(c, log)
        return kids

    def _tri_quality(self, verts, parent):
        xs = np.array([self.vx[v] for v in verts])
        ys = np.array([self.vy[v] for v in verts])
        ex = xs[[1, 2, 0]] - xs
        ey = ys[[1, 2, 0]] - ys
        lens = np.hypot(ex, ey)
        area = 0.5 * abs(ex[0] * ey[1] - ey[0] * ex[1])
        if area <= 0.0 or lens.min() <= 0.0:
            return False
        alt = 2.0 * area / lens.max()
        pv = self.node_v[parent]
        pxs = np.array([self.vx[v] for v in pv])
        pys = np.array([self.vy[v] for v in pv])
        pex = pxs[[1, 2, 0]] - pxs
        pey = pys[[1, 2, 0]] - pys
        p_alt = 2.0 * self.node_area[parent] / np.hypot(pex, pey).max()
        if alt < self.altitude_ratio * p_alt:
            return False
        # smallest angle via the law of cosines
        for i in range(3):
            a, b, c = lens[i], lens[(i + 1) % 3], lens[(i + 2) % 3]
            cosang = np.clip((b * b + c * c - a * a) / (2 * b * c), -1.0, 1.0)
            if np.arccos(cosang) < self.min_angle:
                return False
        return True

    def refine_wet_dry(self, n, k_a, t_a, k_b, t_b, corner_wet, log=None):
        """Split a partially flooded triangle along its shoreline segment.

        The two cut edges must be adjacent (they share the vertex the
        shoreline cuts off); the remaining quadrilateral is split by its
        shorter diagonal.  Returns None when the shoreline is degenerate,
        an edge already carries a point, or a child fails the quality
        bounds; the caller then falls back to regular refinement.
        """
        if not self.node_active[n]:
            raise MeshError(f"node {n} is not active")
        if self.node_level[n] >= self.max_level:
            raise MeshError(f"node {n} is at the refinement level cap")
        if k_a == k_b:
            return None
        eps = 1e-9
        if not (eps < t_a < 1 - eps and eps < t_b < 1 - eps):
            return None
        v = self.node_v[n]
        bt = self.node_btag[n]
        # the shared corner sigma has cut edges (sigma+1)%3 and (sigma+2)%3
        sigma = 3 - k_a - k_b
        k_out = (sigma + 2) % 3            # directed away from v[sigma]
        k_in = (sigma + 1) % 3             # directed into v[sigma]
        t_out = t_a if k_a == k_out else t_b
        t_in = t_a if k_a == k_in else t_b
        for k in (k_out, k_in):
            a, b = v[(k + 1) % 3], v[(k + 2) % 3]
            pv = self.existing_point(a, b)
            if pv is not None and self.vert_use.get(pv, 0) > 0:
                return None
        i_out = self.edge_split_point(v[(k_out + 1) % 3], v[(k_out + 2) % 3], t_out)
        i_in = self.edge_split_point(v[(k_in + 1) % 3], v[(k_in + 2) % 3], t_in)

        vs, v1, v2 = v[sigma], v[(sigma + 1) % 3], v[(sigma + 2) % 3]
        tri1 = (vs, i_out, i_in)
        d1 = np.hypot(self.vx[i_out] - self.vx[v2], self.vy[i_out] - self.vy[v2])
        d2 = np.hypot(self.vx[v1] - self.vx[i_in], self.vy[v1] - self.vy[i_in])
        if d1 <= d2:
            tri2 = (i_out, v1, v2)
            tri3 = (i_out, v2, i_in)
            bt2 = (bt[sigma], BC_INTERIOR, bt[k_out])
            bt3 = (bt[k_in], BC_INTERIOR, BC_INTERIOR)
        else:
            tri2 = (i_out, v1, i_in)
            tri3 = (v1, v2, i_in)
            bt2 = (BC_INTERIOR, BC_INTERIOR, bt[k_out])
            bt3 = (bt[k_in], BC_INTERIOR, bt[sigma])
        for tverts in (tri1, tri2, tri3):
            if not self._tri_quality(tverts, n):
                return None
        m = self.node_level[n] + 1
        bt1 = (BC_INTERIOR, bt[k_in], bt[k_out])
        kids = [
            self._add_node(tri1, bt1, n, m, WETDRY),
            self._add_node(tri2, bt2, n, m, WETDRY),
            self._add_node(tri3, bt3, n, m, WETDRY),
        ]
        self.node_wet[kids[0]] = bool(corner_wet)
        self.node_wet[kids[1]] = not corner_wet
        self.node_wet[kids[2]] = not corner_wet
        self.node_children[n] = kids
        self._deactivate(n, log)
        for c in kids:
            self._activate(c, log)
        return kids

    def _green_split(self, n, k, pvid, log=None):
        """Bisect from the hanging point on edge k to the opposite corner."""
        key = (n, pvid)
        pair = self.green_cache.get(key)
        if pair is None:
            v = self.node_v[n]
            bt = self.node_btag[n]
            m = self.node_level[n]   # closure artifact, keeps the parent depth
            a = self._add_node((v[k], v[(k + 1) % 3], pvid),
                               (bt[k], BC_INTERIOR, bt[(k + 2) % 3]), n, m, GREEN)
            b = self._add_node((v[k], pvid, v[(k + 2) % 3]),
                               (bt[k], bt[(k + 1) % 3], BC_INTERIOR), n, m, GREEN)
            pair = (a, b)
            self.green_cache[key] = pair
        self.active_green[n] = (pair[0], pair[1], pvid)
        self._deactivate(n, log)
        self._activate(pair[0], log)
        self._activate(pair[1], log)
        return pair

    def _revert_green(self, n, log=None):
        a, b, _p = self.active_green.pop(n)
        self._deactivate(a, log)
        self._deactivate(b, log)
        self._activate(n, log)

    def coarsen_family(self, parent, log=None):
        """Deactivate a red/wetdry family and re-activate its parent."""
        kids = self.node_children[parent]
        if not all(self.node_active[c] for c in kids):
            raise MeshError(f"family of {parent} has inactive children")
        for c in kids:
            self._deactivate(c, log)
        self._activate(parent, log)

    # -- hanging nodes -----------------------------------------------------------

    def _hanging_points(self, n):
        v = self.node_v[n]
        out = []
        for k in range(3):
            a, b = v[(k + 1) % 3], v[(k + 2) % 3]
            hit = self.edge_point.get((a, b) if a < b else (b, a))
            if hit is not None and self.vert_use.get(hit[0], 0) > 0:
                out.append((k, hit[0]))
        return out

    def close_hanging_nodes(self, queue=None, log=None):
        """Restore conformity by green bisections and red upgrades.

        A cell with one hanging point gets a green bisection (re-using the
        cached pair when possible); two or three hanging points upgrade to a
        red split, except at the level cap where nested bisections keep the
        depth bound intact.  Terminates because red upgrades are capped and
        bisections strictly reduce the remaining hang count.
        """
        if queue is None:
            queue = self.active_nodes()
        heap = list(queue)
        heapq.heapify(heap)
        seen = set(heap)
        force_red = set()

        def push(m):
            if m not in seen:
                heapq.heappush(heap, m)
                seen.add(m)

        def red_upgrade(m):
            edge_keys = self._edge_keys(m)
            kids = self.refine_red(m, log)
            # the upgrade may have split point-free edges; cells across
            # them now carry fresh hanging nodes
            for key in edge_keys:
                for u in self.edge_use.get(key, ()):
                    push(u)
            return kids

        while heap:
            n = heapq.heappop(heap)
            seen.discard(n)
            if not self.node_active[n]:
                force_red.discard(n)
                continue
            if n in force_red:
                force_red.discard(n)
                kids = red_upgrade(n)
                for c in kids:
                    push(c)
                continue
            pts = self._hanging_points(n)
            if not pts:
                continue
            if self.node_kind[n] == GREEN:
                parent = self.node_parent[n]
                if parent in self.active_green and \
                        self.node_level[parent] < self.max_level and \
                        self.node_kind[parent] != GREEN:
                    # revert the pair; hanging points may sit on sub-edges
                    # the parent cannot see, so its red upgrade is forced
                    self._revert_green(parent, log)
                    force_red.add(parent)
                    push(parent)
                    continue
                # parent capped or itself a closure cell: nested bisection
                # keeps the level bound intact
                k, pvid = pts[0]
                kids = self._green_split(n, k, pvid, log)
            elif len(pts) == 1:
                k, pvid = pts[0]
                kids = self._green_split(n, k, pvid, log)
            elif self.node_level[n] < self.max_level:
                kids = red_upgrade(n)
            else:
                k, pvid = pts[0]
                kids = self._green_split(n, k, pvid, log)
            for c in kids:
                push(c)

    # -- snapshots ---------------------------------------------------------------

    def snapshot(self, force=False):
        """Conforming Triangulation of the active cells (cached)."""
        if self._snapshot is not None and not force:
            return self._snapshot
        act = self.active_nodes()
        tri_nodes = np.array([self.node_v[n] for n in act], dtype=np.int64)
        used, inverse = np.unique(tri_nodes, return_inverse=True)
        vx = np.asarray(self.vx)[used]
        vy = np.asarray(self.vy)[used]
        btag = np.array([self.node_btag[n] for n in act], dtype=np.int8)
        self.generation += 1
        snap = Triangulation(vx, vy, inverse.reshape(-1, 3), btag,
                             generation=self.generation, strict_boundary=True)
        snap.node_ids = np.asarray(act, dtype=np.int64)
        snap.vertex_map = used
        snap.cell_m = np.array([self.node_level[n] for n in act], dtype=np.int64)
        self._snapshot = snap
        return snap

    def consume_origins(self):
        out = self.origins
        self.origins = []
        return out


class _ActivationLog:
    """Nodes whose activity flipped during one adaptation."""

    def __init__(self):
        self.nodes = set()
        self.removed = set()

    def add(self, n):
        self.nodes.add(n)

    def remove(self, n):
        self.removed.add(n)


def adapt(hier, flags, recon, bathy_vhat):
    """One adaptation pass: coarsen, refine, close, and snapshot.

    ``flags`` aligns with the current snapshot's cells.  ``recon`` supplies
    shorelines and wet levels for wet/dry splitting of partially flooded
    cells.  Returns the new snapshot, which is the identical object when
    nothing changed.
    """
    old = hier.snapshot()
    flag_by_node = {int(n): int(f) for n, f in zip(old.node_ids, flags)}
    recon_by_node = {int(n): i for i, n in enumerate(old.node_ids)}
    log = _ActivationLog()
    old_active = set(old.node_ids.tolist())

    # ephemeral greens: revert everything, closure re-creates what remains
    marked_refine = set()
    while hier.active_green:
        progressed = False
        for parent in sorted(hier.active_green):
            a, b, _p = hier.active_green[parent]
            if not (hier.node_active[a] and hier.node_active[b]):
                continue
            fl = (flag_by_node.get(a), flag_by_node.get(b))
            hier._revert_green(parent, log)
            if REFINE in fl or a in marked_refine or b in marked_refine:
                if hier.node_kind[parent] == GREEN:
                    marked_refine.add(parent)
                elif hier.node_level[parent] < hier.max_level:
                    flag_by_node[parent] = REFINE
            elif parent not in flag_by_node:
                both_coarsen = fl[0] == COARSEN and fl[1] == COARSEN
                flag_by_node[parent] = COARSEN if both_coarsen else 0
            progressed = True
        if not progressed:
            raise MeshError("green reversion stalled")

    # coarsening before refinement: unanimously flagged complete families
    families = {}
    for n in hier.active_nodes():
        p = hier.node_parent[n]
        if p >= 0 and hier.node_kind[n] in (RED, WETDRY):
            families.setdefault(p, []).append(n)
    for p in sorted(families):
        kids = hier.node_children.get(p)
        if kids is None or sorted(families[p]) != sorted(kids):
            continue
        if all(flag_by_node.get(c) == COARSEN for c in kids):
            hier.coarsen_family(p, log)
            flag_by_node[p] = 0

    # refinement: wet/dry split where the old reconstruction cut a usable
    # shoreline, regular refinement otherwise
    for n in sorted(k for k, f in flag_by_node.items() if f == REFINE):
        if not hier.node_active[n] or hier.node_kind[n] == GREEN:
            continue
        if hier.node_level[n] >= hier.max_level:
            continue
        kids = None
        i = recon_by_node.get(n)
        if i is not None and recon is not None and recon.wet[i] == PARTIAL:
            k_a, k_b = int(recon.shore_k[i, 0]), int(recon.shore_k[i, 1])
            if k_a >= 0 and k_b >= 0:
                sigma = 3 - k_a - k_b
                corner_b = bathy_vhat[hier.node_v[n][sigma]]
                corner_wet = corner_b < recon.c_level[i]
                kids = hier.refine_wet_dry(n, k_a, float(recon.shore_t[i, 0]),
                                           k_b, float(recon.shore_t[i, 1]),
                                           corner_wet, log)
        if kids is None:
            hier.refine_red(n, log)

    # closure only needs to revisit cells whose neighborhood changed: the
    # flipped nodes themselves plus whole-edge users across their edges
    dirty = set()
    for n in log.nodes | log.removed:
        if hier.node_active[n]:
            dirty.add(n)
        for key in hier._edge_keys(n):
            dirty.update(hier.edge_use.get(key, ()))
    hier.close_hanging_nodes(queue=sorted(dirty), log=log)

    new_active = set(hier.active_nodes())
    if new_active == old_active:
        return old
    return hier.snapshot(force=True)


def project_state(hier, old_snap, new_snap, U_old, recon_old, bathy_vhat,
                  grad_hu=None, grad_hv=None):
    """Conservative transfer of cell averages onto a new snapshot.

    Unchanged cells copy bit for bit.  Cells assembled from finer old cells
    take exact area-weighted averages.  Cells refined from an old cell
    evaluate its corrected reconstruction: linear for fully flooded parents
    (the momenta through their own limited linear reconstructions), exact
    two-piece integrals for partially flooded parents with a mass-weighted
    momentum residual fix, and a uniform residual depth for dry parents.
    When the old coverage of a parent is unrelated to the new children
    (green/red swaps), its water is pooled and redistributed as a flat fill.
    """
    if U_old.shape[0] != old_snap.num_cells:
        raise MeshError("state does not match the old snapshot")
    old_index = {int(n): i for i, n in enumerate(old_snap.node_ids)}
    nv = np.asarray(bathy_vhat)

    covered = {}
    for n in old_index:
        p = hier.node_parent[n]
        while p >= 0:
            covered.setdefault(p, []).append(n)
            p = hier.node_parent[p]

    n_new = new_snap.num_cells
    U_new = np.empty((n_new, 3))

    # unchanged cells copy in bulk; only changed ones walk the tree
    old_sorted = np.sort(old_snap.node_ids)
    old_order = np.argsort(old_snap.node_ids)
    pos = np.searchsorted(old_sorted, new_snap.node_ids)
    pos_c = np.minimum(pos, old_sorted.size - 1)
    same = old_sorted[pos_c] == new_snap.node_ids
    U_new[same] = U_old[old_order[pos_c[same]]]

    groups = {}
    for i in np.flatnonzero(~same):
        n = int(new_snap.node_ids[i])
        if n in covered:
            kids = covered[n]
            w = np.array([hier.node_area[c] for c in kids])
            vals = np.array([U_old[old_index[c]] for c in kids])
            U_new[i] = (w[:, None] * vals).sum(axis=0) / hier.node_area[n]
        else:
            a = hier.node_parent[n]
            while a >= 0 and a not in old_index and a not in covered:
                a = hier.node_parent[a]
            if a < 0:
                raise MeshError(f"new cell {n} has no old coverage")
            groups.setdefault(a, []).append((i, n))

    for a, members in sorted(groups.items()):
        idxs = np.array([m[0] for m in members])
        nodes = [m[1] for m in members]
        areas = np.array([hier.node_area[n] for n in nodes])
        verts = np.array([hier.node_v[n] for n in nodes])
        bverts = nv[verts]
        bmean = bverts.mean(axis=1)
        cx = np.asarray(hier.vx)[verts].mean(axis=1)
        cy = np.asarray(hier.vy)[verts].mean(axis=1)

        if a in old_index:
            ia = old_index[a]
            wa = U_old[ia, 0]
            klass = recon_old.wet[ia]
            if klass == FULL:
                dxc = cx - old_snap.cx[ia]
                dyc = cy - old_snap.cy[ia]
                w_child = wa + recon_old.gw[ia, 0] * dxc + recon_old.gw[ia, 1] * dyc
                if grad_hu is None:
                    hu_child = np.full(len(nodes), U_old[ia, 1])
                    hv_child = np.full(len(nodes), U_old[ia, 2])
                else:
                    hu_child = U_old[ia, 1] + grad_hu[ia, 0] * dxc + grad_hu[ia, 1] * dyc
                    hv_child = U_old[ia, 2] + grad_hv[ia, 0] * dxc + grad_hv[ia, 1] * dyc
                U_new[idxs, 0] = w_child
                U_new[idxs, 1] = hu_child
                U_new[idxs, 2] = hv_child
            elif klass == DRY:
                resid = wa - (nv[np.array(hier.node_v[a])]).mean()
                U_new[idxs, 0] = bmean + resid
                U_new[idxs, 1] = 0.0
                U_new[idxs, 2] = 0.0
            else:
                c = recon_old.c_level[ia]
                hbar = flooded_volume(bverts, areas, c) / areas
                u_ch, v_ch = recon_old.eval_uv(np.full(len(nodes), ia), cx, cy)
                _fix_momenta(U_new, idxs, hier.node_area[a],
                             U_old[ia, 1], U_old[ia, 2],
                             areas, hbar, bmean, u_ch, v_ch)
        else:
            # pooled cousins: flat fill of the parent's water volume
            kids = covered[a]
            kw = np.array([hier.node_area[c] for c in kids])
            kv = np.array([U_old[old_index[c]] for c in kids])
            kb = np.array([nv[np.array(hier.node_v[c])].mean() for c in kids])
            volume = (kw * (kv[:, 0] - kb)).sum()
            hu_tot = (kw * kv[:, 1]).sum()
            hv_tot = (kw * kv[:, 2]).sum()
            averts = nv[np.array(hier.node_v[a])]
            c_fill = solve_flood_level(averts[None, :], np.array([hier.node_area[a]]),
                                       np.array([max(volume, 0.0)]))[0]
            hbar = flooded_volume(bverts, areas, c_fill) / areas
            mass = hbar * areas
            msum = mass.sum()
            share = mass / msum if msum > 0 else np.zeros_like(mass)
            U_new[idxs, 0] = bmean + hbar
            U_new[idxs, 1] = np.where(areas > 0, hu_tot * share / areas, 0.0)
            U_new[idxs, 2] = np.where(areas > 0, hv_tot * share / areas, 0.0)

    return U_new


def _fix_momenta(U_new, idxs, parent_area, hu_par, hv_par,
                 areas, hbar, bmean, u_ch, v_ch):
    """Partial-parent children: exact mass, momenta with a conservation fix."""
    U_new[idxs, 0] = bmean + hbar
    hu0 = hbar * u_ch
    hv0 = hbar * v_ch
    mass = hbar * areas
    msum = mass.sum()
    if msum > 0.0:
        share = mass / msum
        resid_u = parent_area * hu_par - (areas * hu0).sum()
        resid_v = parent_area * hv_par - (areas * hv0).sum()
        hu0 = hu0 + resid_u * share / areas
        hv0 = hv0 + resid_v * share / areas
    U_new[idxs, 1] = hu0
    U_new[idxs, 2] = hv0
