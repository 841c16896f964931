"""Text outputs: energy and rate tables as CSV, fields as legacy ASCII VTK."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .diagnostics import EnergyRecord
from .mesh import Mesh

ENERGY_HEADER = ("step", "t", "E", "E_modified", "H_norm_sq", "r", "r_drift")
RATE_HEADER = ("n_coarse", "n_fine", "h_fine", "k_fine", "norm", "error", "rate")
VTK_TRIANGLE = 5


def _fmt(v: float) -> str:
    # 17 significant digits round-trip every double exactly
    return format(float(v), ".16e")


def write_energy_csv(records, path) -> None:
    """One row per :class:`EnergyRecord`; ``E_modified`` is the dissipated energy."""
    records = list(records)
    if not records:
        raise ValueError("no energy records to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENERGY_HEADER)
        for rec in records:
            w.writerow([str(rec.step)] + [_fmt(v) for v in (
                rec.t, rec.E, rec.E_modified, rec.H_norm_sq, rec.r, rec.r_drift)])


emit_energy_csv = write_energy_csv


def read_energy_csv(path) -> dict[str, np.ndarray]:
    """Columns of an energy CSV keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ENERGY_HEADER:
        raise ValueError(f"{path}: not an energy table")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(ENERGY_HEADER))
    out = {name: data[:, i] for i, name in enumerate(ENERGY_HEADER)}
    out["step"] = out["step"].astype(int)
    return out


def write_rate_csv(report, path) -> None:
    """Long-format table: one row per (pair, norm); ``rate`` compares the
    pair with the next coarser one and is empty for the coarsest pair."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_HEADER)
        for p in range(len(report.n) - 1):
            for s, errs in report.errors.items():
                rate = report.rates[s][p - 1] if p > 0 else None
                w.writerow([report.n[p], report.n[p + 1], _fmt(report.h[p + 1]),
                            _fmt(report.k[p + 1]), s, _fmt(errs[p]),
                            "" if rate is None else _fmt(rate)])


def read_rate_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RATE_HEADER:
            raise ValueError(f"{path}: not a rate table")
        rows = []
        for r in reader:
            rows.append(dict(
                n_coarse=int(r["n_coarse"]), n_fine=int(r["n_fine"]), h_fine=float(r["h_fine"]),
                k_fine=float(r["k_fine"]), norm=r["norm"], error=float(r["error"]),
                rate=float(r["rate"]) if r["rate"] else math.nan,
            ))
    return rows


def write_vtk(path, mesh: Mesh, point_data: dict[str, np.ndarray], title: str = "llbsav field") -> None:
    """Legacy ASCII unstructured grid with nodal 3-vectors."""
    nv, nt = mesh.num_nodes, mesh.num_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double"]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_TRIANGLE)] * nt
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            v = np.asarray(values, dtype=float).reshape(nv, 3)
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(_fmt(c) for c in row) for row in v]
    Path(path).write_text("\n".join(lines) + "\n")


def emit_field_vtk(u: np.ndarray, mesh: Mesh, path) -> None:
    write_vtk(path, mesh, {"u": u})


def read_vtk(path) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Read back what :func:`write_vtk` produces: ``(points, triangles, vectors)``."""
    tokens = Path(path).read_text().split("\n")
    it = iter(tokens[4:])
    points = triangles = None
    data: dict[str, np.ndarray] = {}
    nv = 0
    for line in it:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "POINTS":
            nv = int(parts[1])
            points = np.array([[float(v) for v in next(it).split()] for _ in range(nv)])
        elif parts[0] == "CELLS":
            cells = [next(it).split() for _ in range(int(parts[1]))]
            if any(c[0] != "3" for c in cells):
                raise ValueError(f"{path}: non-triangular cell")
            triangles = np.array([[int(v) for v in c[1:]] for c in cells], dtype=np.int64)
        elif parts[0] == "CELL_TYPES":
            types = {next(it).strip() for _ in range(int(parts[1]))}
            if types - {str(VTK_TRIANGLE)}:
                raise ValueError(f"{path}: unexpected cell types {types}")
        elif parts[0] == "VECTORS":
            data[parts[1]] = np.array([[float(v) for v in next(it).split()] for _ in range(nv)])
    if points is None or triangles is None:
        raise ValueError(f"{path}: missing POINTS or CELLS")
    return points, triangles, data
