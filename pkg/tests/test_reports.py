from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberlab.geometry import Domain3
from fiberlab.limit_deformations import preset
from fiberlab.reports import (
    ConvergenceReport,
    deformed_mesh,
    export_mesh,
    fit_line,
    fit_rate,
    format_cell,
    mesh_obj,
    mesh_vtk,
    polyline_lengths,
    read_obj,
    signed_volume,
    winding_consistent,
    write_csv,
)

EPS = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
CUBE = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)


def test_fit_rate_exact_powers():
    assert fit_rate([(e, e) for e in EPS]) == pytest.approx(1.0, abs=1e-12)
    assert fit_rate([(e, 3 * e**2) for e in EPS]) == pytest.approx(2.0, abs=1e-12)
    slope, intercept, r2 = fit_line([(e, 3 * e**2) for e in EPS])
    assert intercept == pytest.approx(np.log(3)) and r2 == pytest.approx(1.0)


def test_fit_rate_noisy():
    rng = np.random.default_rng(0)
    rows = [(e, e**1.5 * np.exp(rng.uniform(-0.02, 0.02))) for e in EPS]
    assert fit_rate(rows) == pytest.approx(1.5, abs=0.05)


@given(rate=st.floats(-3, 5), scale=st.floats(1e-3, 1e3))
def test_fit_rate_recovers_any_power(rate, scale):
    assert fit_rate([(e, scale * e**rate) for e in EPS]) == pytest.approx(rate, abs=1e-9)


@pytest.mark.parametrize(
    "rows",
    [
        [(0.1, 1.0), (0.05, 0.0), (0.025, 1.0)],
        [(0.1, 1.0), (0.05, -1.0), (0.025, 1.0)],
        [(0.1, 1.0), (0.05, float("nan")), (0.025, 1.0)],
        [(0.0, 1.0), (0.05, 1.0), (0.025, 1.0)],
        [(0.1, 1.0), (0.05, 1.0)],
    ],
)
def test_fit_rate_rejects_bad_rows(rows):
    with pytest.raises(ValueError):
        fit_rate(rows)


def test_report_rows_sorted_and_fits():
    rep = ConvergenceReport()
    for e in (1 / 32, 1 / 8, 1 / 16):
        rep.add(e, "sup", e)
        rep.add(e, "l2", e**2)
    assert [r[0] for r in rep.rows] == [1 / 8, 1 / 8, 1 / 16, 1 / 16, 1 / 32, 1 / 32]
    assert [r[1] for r in rep.rows[:2]] == ["l2", "sup"]
    assert rep.fit("sup")[0] == pytest.approx(1.0)
    assert rep.fit("missing") is None
    rep.fit("sup")
    assert len(rep.fits) == 1
    rep.verdict(1, True, "ok")
    assert rep.verdicts_csv() == "criterion,result,detail\n1,pass,ok\n"
    assert rep.rows_csv().splitlines()[1] == "0.125,l2,0.015625"


def test_format_cell_and_csv(tmp_path):
    assert format_cell(0.1) == "0.1"
    assert format_cell(np.float64(1 / 3)) == repr(1 / 3)
    assert format_cell(False) == "fail"
    assert format_cell((1, 2.5)) == "(1,2.5)"
    path = tmp_path / "t.csv"
    text = write_csv(("a", "b"), [(1, 0.5)], path)
    assert path.read_text() == text == "a,b\n1,0.5\n"


def test_identity_cube_mesh():
    mesh = deformed_mesh(lambda x: np.asarray(x, dtype=float), CUBE, 2)
    assert mesh.vertices.shape == (8, 3) and mesh.faces.shape == (6, 4)
    assert winding_consistent(mesh)
    assert signed_volume(mesh) == pytest.approx(1.0)


@pytest.mark.parametrize("res", [2, 3, (2, 4, 3)])
def test_box_mesh_counts_and_orientation(res):
    dom = Domain3.box((-1.0, 2.0), (0.0, 0.5), 2.0)
    mesh = deformed_mesh(lambda x: np.asarray(x, dtype=float), dom, res)
    n = np.broadcast_to(res, (3,))
    assert len(mesh.vertices) == np.prod(n) - np.prod(n - 2)
    assert winding_consistent(mesh)
    assert signed_volume(mesh) == pytest.approx(3.0)


def test_shear_mesh_vertices():
    u = preset("shear", gamma=1.0).deformation()
    mesh = deformed_mesh(u, CUBE, 2)
    ref = deformed_mesh(lambda x: np.asarray(x, dtype=float), CUBE, 2).vertices
    np.testing.assert_allclose(mesh.vertices, u(ref))
    hit = np.flatnonzero(np.all(ref == 1.0, axis=1))
    np.testing.assert_allclose(mesh.vertices[hit[0]], [1.0, 2.0, 1.0])
    assert signed_volume(mesh) == pytest.approx(1.0)


def test_twist_fiber_polylines_are_straight():
    df = preset("twist")
    dom = Domain3.box((0.0, 4.0), (0.0, 1.0), 1.0)
    mesh = deformed_mesh(df.deformation(), dom, 4, fibers=[(x1, 0.5) for x1 in (0.5, 1.5, 3.0)], fiber_points=7)
    for line, seg in zip(mesh.lines, polyline_lengths(mesh)):
        assert seg.sum() == pytest.approx(dom.L)
        pts = mesh.vertices[line]
        d = pts[-1] - pts[0]
        off = pts - pts[0] - np.outer((pts - pts[0]) @ d / (d @ d), d)
        assert np.abs(off).max() < 1e-14


def test_obj_round_trip_and_determinism(tmp_path):
    u = preset("paraboloid").deformation()
    dom = u.domain
    a = export_mesh(u, dom, 5, "obj", tmp_path / "a.obj", fibers=[(0.0, 0.0)])
    b = export_mesh(u, dom, 5, "obj", fibers=[(0.0, 0.0)])
    assert a == b == (tmp_path / "a.obj").read_text()
    back = read_obj(a)
    mesh = deformed_mesh(u, dom, 5, fibers=[(0.0, 0.0)])
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)
    assert len(back.lines) == 1 and winding_consistent(back)


def test_vtk_layout():
    mesh = deformed_mesh(lambda x: np.asarray(x, dtype=float), CUBE, 2, fibers=[(0.5, 0.5)], fiber_points=3)
    lines = mesh_vtk(mesh).splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[2:4] == ["ASCII", "DATASET POLYDATA"]
    assert "POINTS 11 double" in lines and "POLYGONS 6 30" in lines and "LINES 1 4" in lines
    assert lines[-1] == "3 8 9 10"
    assert mesh_obj(mesh).splitlines()[-1] == "l 9 10 11"


def test_mesh_errors():
    with pytest.raises(ValueError):
        export_mesh(lambda x: x, CUBE, 3, "stl")
    with pytest.raises(ValueError):
        deformed_mesh(lambda x: x, CUBE, 1)
    with pytest.raises(ValueError):
        deformed_mesh(lambda x: np.full(np.shape(x), np.nan), CUBE, 2)
    with pytest.raises(ValueError):
        deformed_mesh(lambda x: x, CUBE, 2, fibers=[(0.5, 0.5)], fiber_points=1)
