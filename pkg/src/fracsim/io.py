"""Output writers: time-series CSV, legacy ASCII VTK, JSON reports."""

from __future__ import annotations

import csv
import json

import numpy as np

SERIES_HEADER = ("t", "mean_phi", "mean_df", "mean_pm", "mean_pf")


def _fmt(x) -> str:
    return repr(float(x))


def write_series_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_series_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_records_csv(path, records) -> None:
    """Rows ``quantity,h_or_dt,error,slope`` (slope repeated per quantity, empty if absent)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("quantity", "h_or_dt", "error", "slope"))
        for rec in records:
            slope = "" if rec.slope is None else _fmt(rec.slope)
            for h, e in zip(rec.h_or_dt, rec.errors):
                w.writerow((rec.quantity, _fmt(h), _fmt(e), slope))


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _scalar_block(fh, name, values):
    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
    for v in values:
        fh.write(f"{float(v):.12e}\n")


def write_matrix_vtk(path, mesh, displacement, cell_fields: dict) -> None:
    """Triangulation with vertex displacement and cell-wise fields."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nmatrix fields\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.12e} {y:.12e} 0\n")
        nt = mesh.n_cells
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n" + "5\n" * nt)
        fh.write(f"POINT_DATA {mesh.n_nodes}\nVECTORS displacement double\n")
        for ux, uy in displacement:
            fh.write(f"{ux:.12e} {uy:.12e} 0\n")
        fh.write(f"CELL_DATA {nt}\n")
        for name in sorted(cell_fields):
            _scalar_block(fh, name, cell_fields[name])


def write_fracture_vtk(path, mesh, face_fields: dict) -> None:
    """Fracture faces as a polyline dataset with face-wise fields."""
    used = np.unique(mesh.edges[mesh.fracture_faces]) if mesh.n_faces else np.zeros(0, int)
    local = {int(n): k for k, n in enumerate(used)}
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nfracture fields\nASCII\nDATASET POLYDATA\n")
        fh.write(f"POINTS {len(used)} double\n")
        for x, y in mesh.nodes[used]:
            fh.write(f"{x:.12e} {y:.12e} 0\n")
        nf = mesh.n_faces
        fh.write(f"LINES {nf} {3 * nf}\n")
        for a, b in mesh.edges[mesh.fracture_faces]:
            fh.write(f"2 {local[int(a)]} {local[int(b)]}\n")
        fh.write(f"CELL_DATA {nf}\n")
        _scalar_block(fh, "fracture_id", mesh.fracture_ids)
        for name in sorted(face_fields):
            _scalar_block(fh, name, face_fields[name])


def write_state_vtk(prefix, sim, state) -> list:
    """Write ``<prefix>.vtk`` (matrix) and ``<prefix>_fracture.vtk``; returns the paths."""
    mesh = sim.mesh
    disp = sim.space.nodal_vertex_displacement(state.u)
    cells = {"p_m": state.p[sim.cells], "phi": state.phi}
    paths = [f"{prefix}.vtk"]
    write_matrix_vtk(paths[0], mesh, disp, cells)
    if mesh.n_faces:
        faces = {
            "p_f": state.p[sim.faces],
            "lambda": state.lam,
            "d_f": state.d_f,
            "jump_n": state.jump,
        }
        paths.append(f"{prefix}_fracture.vtk")
        write_fracture_vtk(paths[1], mesh, faces)
    return paths
