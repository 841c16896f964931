import math

import numpy as np
import pytest

from llbsav import io
from llbsav.convergence import RateReport
from llbsav.diagnostics import EnergyRecord
from llbsav.mesh import build_structured


def _records():
    return [EnergyRecord(i, 0.1 * i, 1.0 / (i + 3), 1.0 / (i + 2), None if i == 0 else 2.0 / 7,
                         math.pi * i, math.e, 1e-17 * i) for i in range(3)]


def test_energy_csv_round_trip(tmp_path):
    path = tmp_path / "e.csv"
    recs = _records()
    io.write_energy_csv(recs, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4 and lines[0] == ",".join(io.ENERGY_HEADER)
    back = io.read_energy_csv(path)
    assert list(back["step"]) == [0, 1, 2]
    for i, r in enumerate(recs):
        assert back["t"][i] == r.t and back["E"][i] == r.E
        assert back["E_modified"][i] == r.E_modified
        assert back["H_norm_sq"][i] == r.H_norm_sq and back["r_drift"][i] == r.r_drift


def test_energy_csv_byte_identical(tmp_path):
    io.write_energy_csv(_records(), tmp_path / "a.csv")
    io.emit_energy_csv(_records(), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_energy_csv_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        io.write_energy_csv([], tmp_path / "x.csv")


def test_read_energy_rejects_other_tables(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        io.read_energy_csv(p)


def test_vtk_single_cell(tmp_path):
    mesh = build_structured((-1, 1, -1, 1), 1)
    u = np.arange(12.0).reshape(4, 3) / 7
    path = tmp_path / "u.vtk"
    io.emit_field_vtk(u, mesh, path)
    text = path.read_text()
    assert "POINTS 4 double" in text and "CELLS 2 8" in text and "CELL_TYPES 2" in text
    pts, tri, data = io.read_vtk(path)
    assert np.array_equal(pts[:, :2], mesh.nodes) and np.all(pts[:, 2] == 0)
    assert np.array_equal(tri, mesh.triangles)
    assert np.array_equal(data["u"], u)


def test_rate_csv_round_trip(tmp_path):
    rep = RateReport([8, 16, 32], [0.3, 0.15, 0.075], [1e-3, 1e-3, 1e-3],
                     {"l2": [0.4, 0.1], "h1": [2.0, 1.0]})
    rep.rates = {"l2": [2.0], "h1": [1.0]}
    path = tmp_path / "r.csv"
    io.write_rate_csv(rep, path)
    rows = io.read_rate_csv(path)
    assert len(rows) == 4
    assert rows[0]["n_coarse"] == 8 and rows[0]["n_fine"] == 16 and math.isnan(rows[0]["rate"])
    fine = {r["norm"]: r for r in rows if r["n_fine"] == 32}
    assert fine["l2"]["rate"] == 2.0 and fine["h1"]["error"] == 1.0
    assert fine["l2"]["h_fine"] == 0.075
