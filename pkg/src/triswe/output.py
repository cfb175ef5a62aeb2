"""Frame output: VTU files for field data plus an appended CSV of diagnostics."""

from __future__ import annotations

import os

import numpy as np

CSV_HEADER = "t,mass,max_dev,min_h,active_cells,wall_s"


def write_frame(tri, state, bathy, wlr, levels, path):
    """One XML unstructured-grid file with the full cell and point data.

    Cell data: w, h, hu, hv, B, level, e, flag; point data: B_hat and the
    vertex residual E.  ``wlr`` may be None (no estimator data yet); the
    ``levels`` argument carries (cell_m, flags) or None.
    """
    nc, nv = tri.num_cells, tri.num_vertices
    w = state[:, 0]
    h = w - bathy.b_cell

    cell_m, flags = (levels if levels is not None
                     else (np.zeros(nc, dtype=int), np.zeros(nc, dtype=int)))
    e_cell = wlr.e_cell if wlr is not None else np.zeros(nc)
    E = wlr.E if wlr is not None else np.zeros(nv)

    def ascii_array(name, data, kind="Float64", comps=1):
        flat = np.asarray(data).reshape(-1)
        if kind == "Float64":
            body = " ".join(f"{v:.17g}" for v in flat)
        else:
            body = " ".join(str(int(v)) for v in flat)
        extra = f' NumberOfComponents="{comps}"' if comps != 1 else ""
        return (f'<DataArray type="{kind}" Name="{name}"{extra} '
                f'format="ascii">{body}</DataArray>')

    points = np.zeros((nv, 3))
    points[:, 0] = tri.vx
    points[:, 1] = tri.vy

    parts = [
        '<?xml version="1.0"?>',
        '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">',
        "<UnstructuredGrid>",
        f'<Piece NumberOfPoints="{nv}" NumberOfCells="{nc}">',
        "<Points>",
        ascii_array("Points", points, comps=3),
        "</Points>",
        "<Cells>",
        ascii_array("connectivity", tri.tri, kind="Int64"),
        ascii_array("offsets", np.arange(3, 3 * nc + 1, 3), kind="Int64"),
        ascii_array("types", np.full(nc, 5), kind="UInt8"),
        "</Cells>",
        '<CellData Scalars="w">',
        ascii_array("w", w),
        ascii_array("h", h),
        ascii_array("hu", state[:, 1]),
        ascii_array("hv", state[:, 2]),
        ascii_array("B", bathy.b_cell),
        ascii_array("level", cell_m, kind="Int64"),
        ascii_array("e", e_cell),
        ascii_array("flag", flags, kind="Int64"),
        "</CellData>",
        "<PointData>",
        ascii_array("B_hat", bathy.vhat),
        ascii_array("E", E),
        "</PointData>",
        "</Piece>",
        "</UnstructuredGrid>",
        "</VTKFile>",
    ]
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def open_csv(path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    f = open(path, "w")
    f.write(CSV_HEADER + "\n")
    return f


def append_csv_row(f, t, mass, max_dev, min_h, active_cells, wall_s):
    f.write(f"{t:.17e},{mass:.17e},{max_dev:.17e},{min_h:.17e},"
            f"{active_cells},{wall_s:.6f}\n")
    f.flush()
