"""Rate fitting, tabular reports and deformed-mesh export."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import Domain3

MIN_FIT_ROWS = 3


def format_cell(value) -> str:
    """Stable text form for report cells: shortest round-trip repr for floats."""
    if isinstance(value, (bool, np.bool_)):
        return "pass" if value else "fail"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list, np.ndarray)):
        return "(" + ",".join(format_cell(v) for v in value) + ")"
    return str(value)


def fit_rate(rows: Sequence) -> float:
    """Least-squares slope of ``log value`` against ``log eps``."""
    return fit_line(rows)[0]


def fit_line(rows: Sequence) -> tuple[float, float, float]:
    """``(slope, intercept, R^2)`` of the log-log fit through ``(eps, value)`` pairs."""
    if len(rows) < MIN_FIT_ROWS:
        raise ValueError(f"need at least {MIN_FIT_ROWS} (eps, value) pairs, got {len(rows)}")
    eps = np.array([float(r[0]) for r in rows])
    val = np.array([float(r[1]) for r in rows])
    if np.any(eps <= 0) or np.any(~np.isfinite(eps)):
        raise ValueError("eps values must be positive")
    if np.any(~(val > 0)) or np.any(~np.isfinite(val)):
        raise ValueError("values must be positive and finite for a log-log fit")
    x, y = np.log(eps), np.log(val)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    spread = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / spread if spread > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)  # (eps, metric, value)
    fits: list = field(default_factory=list)  # (metric, slope, intercept, r2)
    verdicts: list = field(default_factory=list)  # (criterion, passed, detail)

    def add(self, eps, metric: str, value: float) -> None:
        self.rows.append((float(eps), metric, float(value)))
        self.rows.sort(key=lambda r: (-r[0], r[1]))

    def series(self, metric: str) -> list[tuple[float, float]]:
        return [(e, v) for e, m, v in self.rows if m == metric]

    def fit(self, metric: str) -> tuple[float, float, float] | None:
        """Fit one metric; ``None`` with fewer than three rows."""
        pts = self.series(metric)
        if len(pts) < MIN_FIT_ROWS:
            return None
        slope, intercept, r2 = fit_line(pts)
        self.fits = [f for f in self.fits if f[0] != metric] + [(metric, slope, intercept, r2)]
        return slope, intercept, r2

    def verdict(self, criterion, passed: bool, detail: str) -> None:
        self.verdicts.append((str(criterion), bool(passed), detail))

    def rows_csv(self) -> str:
        return write_csv(("eps", "metric", "value"), self.rows)

    def fits_csv(self) -> str:
        return write_csv(("metric", "slope", "intercept", "r2"), self.fits)

    def verdicts_csv(self) -> str:
        return write_csv(("criterion", "result", "detail"), self.verdicts)


def write_csv(header: Sequence[str], rows: Iterable[Sequence], path: str | Path | None = None) -> str:
    """CSV text with ``\\n`` line endings; written to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_cell(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# -- meshes --------------------------------------------------------------------------


@dataclass
class MeshExport:
    vertices: np.ndarray  # (n, 3)
    faces: np.ndarray  # (f, 4) quads, counter-clockwise seen from outside
    lines: list = field(default_factory=list)  # vertex index arrays of polylines

    def __post_init__(self):
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertex coordinates")


def _boundary_grid(domain: Domain3, resolution) -> tuple[np.ndarray, np.ndarray]:
    """Reference vertices on the boundary of the box and outward-oriented quads."""
    n = np.broadcast_to(np.asarray(resolution, dtype=int), (3,))
    if np.any(n < 2):
        raise ValueError("resolution must be at least 2 per axis")
    axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(domain.bounds3, n)]
    index = -np.ones(tuple(n), dtype=int)
    I, J, K = np.meshgrid(*[np.arange(k) for k in n], indexing="ij")
    on = (I == 0) | (I == n[0] - 1) | (J == 0) | (J == n[1] - 1) | (K == 0) | (K == n[2] - 1)
    index[on] = np.arange(int(on.sum()))
    verts = np.stack([axes[0][I[on]], axes[1][J[on]], axes[2][K[on]]], axis=-1)
    faces = []
    for axis in range(3):
        a, b = [d for d in range(3) if d != axis]
        for side, last in ((0, False), (n[axis] - 1, True)):
            for s in range(n[a] - 1):
                for t in range(n[b] - 1):
                    quad = []
                    for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        idx = [0, 0, 0]
                        idx[axis], idx[a], idx[b] = side, s + da, t + db
                        quad.append(index[tuple(idx)])
                    # e_a x e_b points along +e_axis except for axis 1; outward normals
                    # on the low side point the other way
                    right_handed = axis != 1
                    if right_handed != last:
                        quad = quad[::-1]
                    faces.append(quad)
    return verts, np.asarray(faces, dtype=int)


def deformed_mesh(u: Callable, domain: Domain3, resolution=8, fibers: Sequence | None = None, fiber_points: int = 9) -> MeshExport:
    """Boundary surface of ``domain`` mapped by ``u`` plus optional vertical fiber lines.

    ``fibers`` lists ``x'`` positions; each gives a polyline through
    ``u(x', x3)`` at ``fiber_points`` equally spaced heights.
    """
    ref, faces = _boundary_grid(domain, resolution)
    verts = [np.asarray(u(ref), dtype=float)]
    lines = []
    offset = len(ref)
    if fibers is not None:
        if fiber_points < 2:
            raise ValueError("fiber lines need at least 2 points")
        z = np.linspace(0.0, domain.L, fiber_points)
        for xp in fibers:
            pts = np.c_[np.full(fiber_points, float(xp[0])), np.full(fiber_points, float(xp[1])), z]
            verts.append(np.asarray(u(pts), dtype=float))
            lines.append(np.arange(offset, offset + fiber_points))
            offset += fiber_points
    return MeshExport(np.concatenate(verts), faces, lines)


def _num(v: float) -> str:
    return repr(float(v)) if v != 0 else "0.0"


def mesh_obj(mesh: MeshExport) -> str:
    out = [f"v {_num(a)} {_num(b)} {_num(c)}" for a, b, c in mesh.vertices]
    out += ["f " + " ".join(str(i + 1) for i in f) for f in mesh.faces]
    out += ["l " + " ".join(str(i + 1) for i in line) for line in mesh.lines]
    return "\n".join(out) + "\n"


def mesh_vtk(mesh: MeshExport, title: str = "deformed body") -> str:
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET POLYDATA"]
    out.append(f"POINTS {len(mesh.vertices)} double")
    out += [f"{_num(a)} {_num(b)} {_num(c)}" for a, b, c in mesh.vertices]
    if len(mesh.faces):
        out.append(f"POLYGONS {len(mesh.faces)} {len(mesh.faces) * 5}")
        out += ["4 " + " ".join(str(i) for i in f) for f in mesh.faces]
    if mesh.lines:
        size = sum(len(line) + 1 for line in mesh.lines)
        out.append(f"LINES {len(mesh.lines)} {size}")
        out += [f"{len(line)} " + " ".join(str(i) for i in line) for line in mesh.lines]
    return "\n".join(out) + "\n"


def export_mesh(u: Callable, domain: Domain3, resolution, fmt: str = "obj", path: str | Path | None = None, fibers=None, fiber_points: int = 9) -> str:
    """Write the deformed boundary (and fiber polylines) as OBJ or legacy VTK."""
    mesh = deformed_mesh(u, domain, resolution, fibers, fiber_points)
    if fmt == "obj":
        text = mesh_obj(mesh)
    elif fmt == "vtk":
        text = mesh_vtk(mesh)
    else:
        raise ValueError(f"unknown mesh format {fmt!r}; use 'obj' or 'vtk'")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_obj(text: str) -> MeshExport:
    """Parse the subset of OBJ written by :func:`mesh_obj`."""
    verts, faces, lines = [], [], []
    for raw in text.splitlines():
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(v) - 1 for v in parts[1:]])
        elif parts[0] == "l":
            lines.append(np.array([int(v) - 1 for v in parts[1:]]))
    return MeshExport(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=int).reshape(-1, 4), lines)


def winding_consistent(mesh: MeshExport) -> bool:
    """Every interior edge is used once in each direction (closed, oriented surface)."""
    edges: dict = {}
    for f in mesh.faces:
        for a, b in zip(f, np.roll(f, -1)):
            edges[(int(a), int(b))] = edges.get((int(a), int(b)), 0) + 1
    return all(c == 1 and edges.get((b, a), 0) == 1 for (a, b), c in edges.items())


def signed_volume(mesh: MeshExport) -> float:
    """Enclosed volume from the divergence theorem over triangulated quads."""
    v = mesh.vertices
    total = 0.0
    for f in mesh.faces:
        for a, b, c in ((f[0], f[1], f[2]), (f[0], f[2], f[3])):
            total += float(np.dot(v[a], np.cross(v[b], v[c])))
    return total / 6.0


def polyline_lengths(mesh: MeshExport) -> list[np.ndarray]:
    return [np.linalg.norm(np.diff(mesh.vertices[line], axis=0), axis=-1) for line in mesh.lines]

