import csv
import subprocess
import sys

import numpy as np
import pytest

from evosurf.cli import (
    CONVERGENCE_COLUMNS,
    SUMMARY_COLUMNS,
    RunConfig,
    convergence_study,
    dump_surface,
    main,
    mass_study,
    parse_config,
    read_vtk,
    run,
    thread_cap,
)
from evosurf.assembly import NodalField
from evosurf.exceptions import ConfigurationError, GeometryError
from evosurf.geometry import reconstruct_cross_section
from evosurf.mesh import BoxDomain, build_box_mesh
from evosurf.problems import get_problem


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_config():
    cfg = parse_config("""
        # comment line
        problem = dziuk_moving   # trailing comment
        h = 0.25
        dt = 0.1
        t_end = 8
        nu = 0.5
        box = -2, -2, -2, 2, 2, 2
        dump_surfaces = yes
    """)
    assert cfg.problem == "dziuk_moving" and cfg.h == 0.25 and cfg.nu_override == 0.5
    assert cfg.box == (-2.0, -2.0, -2.0, 2.0, 2.0, 2.0)
    assert cfg.dump_surfaces is True and cfg.solver_tol == 1e-10


@pytest.mark.parametrize("text", ["h 0.5", "colour = red", "h = 0.5\nh = 0.25", "h = abc",
                                  "dt = 0.3\nt_end = 1", "box = 1 2 3", "h = -1", "dump_surfaces = maybe"])
def test_bad_configs(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("EVOSURF_NUM_THREADS", raising=False)
    assert thread_cap() is None
    monkeypatch.setenv("EVOSURF_NUM_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("EVOSURF_NUM_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        thread_cap()


def test_run_writes_outputs(tmp_path):
    cfg = RunConfig(problem="shrinking_sphere", h=0.5, dt=0.5, t_end=1.0, outputs=tmp_path)
    run(cfg)
    rows = _rows(tmp_path / "run_summary.csv")
    assert rows[0] == SUMMARY_COLUMNS
    assert len(rows) == 2
    vals = dict(zip(rows[0], rows[1]))
    assert vals["problem"] == "shrinking_sphere" and float(vals["nu"]) == 1.0
    assert all(np.isfinite(float(vals[k])) for k in ("err_l2_final", "err_l2h1", "mass_abs_err"))
    mass = _rows(tmp_path / "mass.csv")
    assert mass[0] == ["t", "M_h"] and [float(r[0]) for r in mass[1:]] == [0.5, 1.0]


def test_identical_runs_give_identical_files(tmp_path):
    text = "problem = static_sphere\nh = 0.5\ndt = 0.5\nt_end = 1\ndump_surfaces = true\nwall_clock = false\n"
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main([ "-o", str(out), "run", str(_write(tmp_path, text))]) == 0
        outs.append(out)
    for name in ("run_summary.csv", "mass.csv", "surfaces/surface_00000.vtk", "surfaces/surface_00002.vtk"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_static_sphere_dump_is_a_closed_surface(tmp_path):
    mesh = build_box_mesh(BoxDomain((-2, -2, -2), (2, 2, 2)), 0.5)
    cs = reconstruct_cross_section(mesh, get_problem("static_sphere"), 0.0)
    path = dump_surface(cs, NodalField.constant(mesh, 1.0), tmp_path / "s.vtk")
    text = path.read_text()
    for token in ("DATASET POLYDATA", "POINTS", "POLYGONS", "POINT_DATA", "SCALARS u"):
        assert token in text
    pts, tris, vals = read_vtk(path)
    edges = {tuple(sorted(e)) for a, b, c in tris for e in ((a, b), (b, c), (a, c))}
    assert len(pts) - len(edges) + len(tris) == 2
    np.testing.assert_allclose(vals, 1.0)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=0.1)


def test_empty_dump_is_refused(tmp_path):
    mesh = build_box_mesh(BoxDomain((-2, -2, -2), (2, 2, 2)), 0.5)
    cs = reconstruct_cross_section(mesh, get_problem("static_sphere"), 0.0)
    empty = type(cs)(cs.tris[:0], cs.area[:0], cs.normal[:0], cs.parent[:0], 0.0)
    with pytest.raises(GeometryError):
        dump_surface(empty, NodalField.constant(mesh), tmp_path / "e.vtk")
    assert not (tmp_path / "e.vtk").exists()


def test_invalid_config_exit_code(tmp_path, capsys):
    rc = main(["run", str(_write(tmp_path, "h = 0.5\ndt = 0.3\nt_end = 1\n"))])
    assert rc != 0
    assert "ConfigurationError" in capsys.readouterr().err


def test_failed_run_writes_sentinel(tmp_path, capsys):
    text = "problem = shrinking_sphere\nh = 0.5\ndt = 0.5\nt_end = 1\nbox = -1.5 -1.5 -1.5 1.5 1.5 1.5\n"
    rc = main(["-o", str(tmp_path), "run", str(_write(tmp_path, text))])
    assert rc != 0
    assert "GeometryError" in capsys.readouterr().err
    rows = _rows(tmp_path / "run_summary.csv")
    assert rows[1][SUMMARY_COLUMNS.index("err_l2_final")] == "FAILED"


def test_convergence_structure(tmp_path):
    cfg = RunConfig(problem="shrinking_sphere", h=0.5, dt=0.5, t_end=1.0, outputs=tmp_path)
    rows = convergence_study(cfg, "time", 2)
    table = _rows(tmp_path / "convergence.csv")
    assert table[0] == CONVERGENCE_COLUMNS
    assert len(table) == 3
    orders = [r[CONVERGENCE_COLUMNS.index("order_l2_final")] for r in table[1:]]
    assert orders[0] == "" and np.isfinite(float(orders[1]))
    assert [r["dt"] for r in rows] == [0.5, 0.25]
    with pytest.raises(ConfigurationError):
        convergence_study(cfg, "space", 1)


def test_convergence_failure_writes_sentinel(tmp_path):
    # radius 1.5 touches the boundary layer of [-1.5, 1.5]^3
    cfg = RunConfig(problem="shrinking_sphere", h=0.5, dt=0.5, t_end=0.5, box=(-1.5,) * 3 + (1.5,) * 3,
                    outputs=tmp_path)
    with pytest.raises(GeometryError):
        convergence_study(cfg, "space", 2)
    table = _rows(tmp_path / "convergence.csv")
    assert table[0] == CONVERGENCE_COLUMNS and len(table) == 2
    assert table[1][-1] == "FAILED GeometryError"


def test_mass_study(tmp_path):
    cfg = RunConfig(problem="static_sphere", h=0.5, dt=0.5, t_end=1.0, outputs=tmp_path)
    rows = mass_study(cfg, "dt", 2)
    assert len(rows) == 2 and all(r["mass_abs_err"] < 1e-9 for r in rows)
    assert (tmp_path / "mass_study.csv").exists()


def test_dziuk_mass_csv_row_count(tmp_path):
    cfg = RunConfig(problem="dziuk_moving", h=0.5, dt=0.1, t_end=8.0, outputs=tmp_path)
    run(cfg)
    assert len(_rows(tmp_path / "mass.csv")) == 1 + 80


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, f"problem = static_sphere\nh = 0.5\ndt = 0.5\nt_end = 0.5\noutputs = {tmp_path / 'o'}\n")
    out = subprocess.run([sys.executable, "-m", "evosurf", "run", str(cfg)], capture_output=True, text=True,
                         env={"EVOSURF_NUM_THREADS": "1", "PATH": ""})
    assert out.returncode == 0, out.stderr
    assert "static_sphere" in out.stdout
