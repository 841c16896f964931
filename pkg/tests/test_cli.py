import pytest

from llbsav import io
from llbsav.cli import main


def test_presets(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    assert "simulation1" in out and "gamma=100.0" in out


def test_check(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 7


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as err:
        main(["fly"])
    assert err.value.code == 2


def test_run_writes_outputs(tmp_path, capsys):
    rc = main(["run", "--preset", "simulation1", "--n", "4", "--k", "1e-3", "--T", "3e-3",
               "--vtk-stride", "2", "--out", str(tmp_path)])
    assert rc == 0
    e = io.read_energy_csv(tmp_path / "energy.csv")
    assert list(e["step"]) == [0, 1, 2, 3]
    assert sorted(p.name for p in tmp_path.glob("*.vtk")) == ["u_000000.vtk", "u_000002.vtk"]
    pts, tri, data = io.read_vtk(tmp_path / "u_000002.vtk")
    assert pts.shape == (25, 3) and data["u"].shape == (25, 3)


def test_run_bdf2_energy_decreases(tmp_path):
    rc = main(["run", "--preset", "simulation2", "--scheme", "bdf2", "--n", "4", "--k", "1e-2",
               "--T", "5e-2", "--out", str(tmp_path)])
    assert rc == 0
    e = io.read_energy_csv(tmp_path / "energy.csv")
    assert (e["E_modified"][2:] <= e["E_modified"][1:-1]).all()


def test_study_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("preset = simulation1\nn = 2\nlevels = 3\nk = 1e-3\nT = 2e-3\n")
    assert main(["study", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = io.read_rate_csv(tmp_path / "rates.csv")
    assert len(rows) == 6
    assert "headline rates" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("k = -1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "'k'" in capsys.readouterr().err
