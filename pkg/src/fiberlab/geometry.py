"""Reference body, fiber lattice and the rigid set.

The body is ``Omega = omega x (0, L)`` with a rectangular cross-section
``omega``.  Fibers run along ``x3``; their cross-sections live in the scaled
lattice cells ``eps*(k + [0,1)^2)`` and keep a relative margin ``alpha`` to
the cell boundary.  Every cross-section contains the open square

    S_k = a_k + eps*(-delta/2, delta/2)^2

centred at ``a_k``.  All queries are vectorised over leading array axes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
import shapely
from shapely.geometry import Polygon, box

# slack for deciding whether lattice lines coincide with the boundary of omega
_INDEX_TOL = 1e-9

LAYOUT_KEYS = ("epsilon", "alpha", "delta", "center_mode", "center", "seed", "shape", "polygon")


def parse_epsilon(value) -> Fraction | float:
    """Accept ``"1/16"``, ``Fraction``, ``int`` or ``float``.

    Strings and integers stay exact rationals so cell arithmetic does not
    drift; floats are kept as floats.
    """
    if isinstance(value, Fraction):
        eps = value
    elif isinstance(value, bool):
        raise TypeError("epsilon must be numeric")
    elif isinstance(value, int):
        eps = Fraction(value)
    elif isinstance(value, str):
        eps = Fraction(value.strip())
    elif isinstance(value, float):
        eps = value
    else:
        raise TypeError(f"cannot interpret epsilon={value!r}")
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {value!r}")
    return eps


def _format_epsilon(eps: Fraction | float) -> str | float:
    if isinstance(eps, Fraction):
        return str(eps)
    return eps


@dataclass(frozen=True)
class Domain3:
    """``Omega = (omega_min, omega_max) x (0, L)`` with a rectangular ``omega``."""

    omega_min: tuple[float, float]
    omega_max: tuple[float, float]
    L: float = 1.0

    def __post_init__(self):
        lo = tuple(float(v) for v in self.omega_min)
        hi = tuple(float(v) for v in self.omega_max)
        if len(lo) != 2 or len(hi) != 2:
            raise ValueError("omega corners must be 2-vectors")
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise ValueError(f"omega_min {lo} must be below omega_max {hi} componentwise")
        if not self.L > 0:
            raise ValueError(f"height L must be positive, got {self.L}")
        object.__setattr__(self, "omega_min", lo)
        object.__setattr__(self, "omega_max", hi)
        object.__setattr__(self, "L", float(self.L))

    @classmethod
    def box(cls, x1: tuple[float, float], x2: tuple[float, float], L: float = 1.0) -> "Domain3":
        return cls((x1[0], x2[0]), (x1[1], x2[1]), L)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.omega_min)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.omega_max)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def area(self) -> float:
        w = self.widths
        return float(w[0] * w[1])

    @property
    def volume(self) -> float:
        return self.area * self.L

    @property
    def cross_section(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self.omega_min[0], self.omega_max[0]), (self.omega_min[1], self.omega_max[1])

    @property
    def bounds3(self) -> tuple[tuple[float, float], ...]:
        (a1, b1), (a2, b2) = self.cross_section
        return ((a1, b1), (a2, b2), (0.0, self.L))

    def contains(self, x, closed: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.array([*self.omega_min, 0.0])
        hi = np.array([*self.omega_max, self.L])
        if closed:
            return np.all((x >= lo) & (x <= hi), axis=-1)
        return np.all((x > lo) & (x < hi), axis=-1)

    def clamp_xy(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Nearest point of the closed rectangle, plus a mask of untouched coordinates."""
        y = np.asarray(y, dtype=float)
        yc = np.clip(y, self.lo, self.hi)
        return yc, yc == y

    def to_dict(self) -> dict:
        return {"omega_min": list(self.omega_min), "omega_max": list(self.omega_max), "L": self.L}

    @classmethod
    def from_dict(cls, data: dict) -> "Domain3":
        unknown = set(data) - {"omega_min", "omega_max", "L"}
        if unknown:
            raise ValueError(f"unknown domain keys: {sorted(unknown)}")
        return cls(tuple(data["omega_min"]), tuple(data["omega_max"]), data.get("L", 1.0))


@lru_cache(maxsize=1 << 16)
def _jittered_offset(seed: int, k1: int, k2: int) -> tuple[float, float]:
    # one independent stream per (seed, cell); lattice indices shifted to be non-negative
    ss = np.random.SeedSequence([seed, k1 + (1 << 31), k2 + (1 << 31)])
    u = np.random.default_rng(ss).random(2)
    return float(u[0]), float(u[1])


class SlopeBound(NamedTuple):
    bound: float
    realized: float


@dataclass(frozen=True)
class Connector:
    """Parallelogram joining facing edges of two neighbouring inner squares.

    In local coordinates ``(s, t)`` measured from ``anchor`` along the
    connection direction and across it, the set is
    ``{0 < s < L1, m*s < t < m*s + L2}``.
    """

    L1: float
    L2: float
    m: float
    anchor: tuple[float, float]
    direction: str

    def to_physical(self, s, t) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.direction == "horizontal":
            return np.stack([self.anchor[0] + s, self.anchor[1] + t], axis=-1)
        return np.stack([self.anchor[0] + t, self.anchor[1] + s], axis=-1)


@dataclass(frozen=True)
class FiberLayout:
    """Lattice of fiber cross-sections at scale ``epsilon``.

    ``center`` is the periodic square centre in cell units; jittered layouts
    draw one centre per cell from ``[alpha+delta/2, 1-alpha-delta/2)^2``.
    ``polygon`` (shape ``"polygon"``) gives the cross-section vertices in
    cell units and must sit in the margin box and contain the square.
    """

    epsilon: Fraction | float
    alpha: float = 0.25
    delta: float = 0.4
    center_mode: str = "periodic"
    center: tuple[float, float] = (0.5, 0.5)
    seed: int = 0
    shape: str = "square"
    polygon: tuple[tuple[float, float], ...] | None = None
    _poly: Polygon | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "epsilon", parse_epsilon(self.epsilon))
        a, d = float(self.alpha), float(self.delta)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "delta", d)
        if not 0.0 < a < 0.5:
            raise ValueError(f"alpha must lie in (0, 1/2), got {a}")
        if not (d > 0 and d + 2 * a < 1):
            raise ValueError(f"need delta > 0 and delta + 2*alpha < 1, got delta={d}, alpha={a}")
        if self.center_mode not in ("periodic", "jittered"):
            raise ValueError(f"center_mode must be 'periodic' or 'jittered', got {self.center_mode!r}")
        c = (float(self.center[0]), float(self.center[1]))
        object.__setattr__(self, "center", c)
        lo, hi = a + d / 2, 1 - a - d / 2
        if self.center_mode == "periodic" and not all(lo <= ci < hi or math.isclose(ci, lo) for ci in c):
            raise ValueError(f"periodic center {c} must lie in [{lo}, {hi})^2")
        if self.shape == "square":
            if self.polygon is not None:
                raise ValueError("square shape takes no polygon")
        elif self.shape == "polygon":
            if self.center_mode != "periodic":
                raise ValueError("polygon cross-sections require periodic centres")
            if self.polygon is None or len(self.polygon) < 3:
                raise ValueError("polygon shape needs at least three vertices")
            verts = tuple((float(p[0]), float(p[1])) for p in self.polygon)
            object.__setattr__(self, "polygon", verts)
            poly = Polygon(verts)
            if not poly.is_valid:
                raise ValueError("polygon is not a simple polygon")
            margin = box(a, a, 1 - a, 1 - a)
            if not margin.buffer(1e-12).contains(poly):
                raise ValueError("polygon leaves the margin box [alpha, 1-alpha]^2")
            sq = box(c[0] - d / 2, c[1] - d / 2, c[0] + d / 2, c[1] + d / 2)
            if not poly.buffer(1e-12).contains(sq):
                raise ValueError("polygon must contain the inner square")
            object.__setattr__(self, "_poly", poly)
        else:
            raise ValueError(f"shape must be 'square' or 'polygon', got {self.shape!r}")

    # -- basic lattice queries ---------------------------------------------

    @property
    def eps(self) -> float:
        return float(self.epsilon)

    def cell_of(self, x_prime) -> np.ndarray:
        """Integer cell index ``k`` with ``x' in eps*(k + [0,1)^2)``."""
        xp = np.asarray(x_prime, dtype=float)[..., :2]
        return np.floor(xp / self.eps).astype(np.int64)

    def center_offsets(self, k) -> np.ndarray:
        """Square centres in cell units (relative to the cell corner)."""
        k = np.asarray(k, dtype=np.int64)
        if self.center_mode == "periodic":
            return np.broadcast_to(np.array(self.center), k.shape).astype(float)
        lo = self.alpha + self.delta / 2
        width = 1 - 2 * self.alpha - self.delta
        flat = k.reshape(-1, 2)
        out = np.empty(flat.shape, dtype=float)
        for n, (k1, k2) in enumerate(flat):
            out[n] = _jittered_offset(int(self.seed), int(k1), int(k2))
        return (lo + width * out).reshape(k.shape)

    def centers(self, k) -> np.ndarray:
        """Absolute square centres ``a_k``."""
        k = np.asarray(k, dtype=np.int64)
        return self.eps * (k + self.center_offsets(k))

    def square_bounds(self, k) -> tuple[np.ndarray, np.ndarray]:
        a = self.centers(k)
        h = self.eps * self.delta / 2
        return a - h, a + h

    def in_square(self, x) -> np.ndarray:
        xp = np.asarray(x, dtype=float)[..., :2]
        k = self.cell_of(xp)
        a = self.centers(k)
        return np.all(np.abs(xp - a) < self.eps * self.delta / 2, axis=-1)

    def is_rigid(self, x) -> np.ndarray:
        """True where ``x'`` lies in a fiber cross-section; ``x3`` is ignored."""
        xp = np.asarray(x, dtype=float)[..., :2]
        if self.shape == "square":
            return self.in_square(xp)
        k = self.cell_of(xp)
        local = xp / self.eps - k
        flat = local.reshape(-1, 2)
        inside = shapely.contains_xy(self._poly, flat[:, 0], flat[:, 1])
        return inside.reshape(local.shape[:-1])

    def cross_section_area(self) -> float:
        """Area of one (unclipped) cross-section."""
        if self.shape == "square":
            return (self.delta * self.eps) ** 2
        return self._poly.area * self.eps**2

    # -- cell ranges -----------------------------------------------------------

    def index_range(self, lo: float, hi: float) -> tuple[int, int]:
        """Inclusive range of indices whose closed cells lie inside ``[lo, hi]``."""
        e = self.eps
        return math.ceil(lo / e - _INDEX_TOL), math.floor(hi / e + _INDEX_TOL) - 1

    def interior_cells(self, domain: Domain3, window: Sequence[Sequence[float]] | None = None) -> np.ndarray:
        """Cells whose closed cuboid lies in the closed body (and in ``window``)."""
        (a1, b1), (a2, b2) = domain.cross_section
        if window is not None:
            (w1, v1), (w2, v2) = window
            a1, b1, a2, b2 = max(a1, w1), min(b1, v1), max(a2, w2), min(b2, v2)
        i0, i1 = self.index_range(a1, b1)
        j0, j1 = self.index_range(a2, b2)
        if i1 < i0 or j1 < j0:
            return np.zeros((0, 2), dtype=np.int64)
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        return np.stack([ii.ravel(), jj.ravel()], axis=-1).astype(np.int64)

    def breakpoints(self, lo: float, hi: float, axis: int, kinks: bool = True, squares: bool = True) -> np.ndarray:
        """Lattice-induced break lines inside ``(lo, hi)`` along one axis.

        Cell boundaries, the kink lines ``eps*(j +- alpha)`` of the identity
        approximation and (periodic layouts) the inner-square edges.
        """
        e = self.eps
        j0, j1 = math.floor(lo / e) - 1, math.ceil(hi / e) + 1
        j = np.arange(j0, j1 + 1, dtype=float)
        pts = [e * j]
        if kinks:
            pts += [e * (j + self.alpha), e * (j - self.alpha)]
        if squares and self.center_mode == "periodic":
            c = self.center[axis]
            pts += [e * (j + c - self.delta / 2), e * (j + c + self.delta / 2)]
            if self.shape == "polygon":
                xs = np.unique([v[axis] for v in self.polygon])
                pts += [e * (j + x) for x in xs]
        pts = np.unique(np.concatenate(pts))
        span = hi - lo
        keep = (pts > lo + 1e-12 * span) & (pts < hi - 1e-12 * span)
        return pts[keep]

    # -- serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "epsilon": _format_epsilon(self.epsilon),
            "alpha": self.alpha,
            "delta": self.delta,
            "center_mode": self.center_mode,
            "center": list(self.center),
            "seed": int(self.seed),
            "shape": self.shape,
            "polygon": None if self.polygon is None else [list(v) for v in self.polygon],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FiberLayout":
        unknown = set(data) - set(LAYOUT_KEYS)
        if unknown:
            raise ValueError(f"unknown layout keys: {sorted(unknown)}")
        kw = dict(data)
        if "center" in kw:
            kw["center"] = tuple(kw["center"])
        if kw.get("polygon") is not None:
            kw["polygon"] = tuple(tuple(v) for v in kw["polygon"])
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FiberLayout":
        return cls.from_dict(json.loads(text))


def rigid_volume_fraction(layout: FiberLayout, domain: Domain3) -> float:
    """``|Y_rig ∩ Omega| / |Omega|`` by exact clipped areas per cell."""
    (a1, b1), (a2, b2) = domain.cross_section
    e = layout.eps
    if len(layout.interior_cells(domain)) == 0:
        raise ValueError(f"no lattice cell of size {e} fits inside omega; refine epsilon")
    i0, i1 = math.floor(a1 / e), math.ceil(b1 / e) - 1
    j0, j1 = math.floor(a2 / e), math.ceil(b2 / e) - 1
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    k = np.stack([ii.ravel(), jj.ravel()], axis=-1)
    if layout.shape == "square":
        lo, hi = layout.square_bounds(k)
        w1 = np.clip(np.minimum(hi[:, 0], b1) - np.maximum(lo[:, 0], a1), 0, None)
        w2 = np.clip(np.minimum(hi[:, 1], b2) - np.maximum(lo[:, 1], a2), 0, None)
        rigid = float(np.sum(w1 * w2))
    else:
        omega = box(a1, a2, b1, b2)
        full = layout.cross_section_area()
        rigid = 0.0
        for k1, k2 in k:
            if a1 <= e * k1 and e * (k1 + 1) <= b1 and a2 <= e * k2 and e * (k2 + 1) <= b2:
                rigid += full
                continue
            verts = [(e * (k1 + v[0]), e * (k2 + v[1])) for v in layout.polygon]
            rigid += Polygon(verts).intersection(omega).area
    return rigid / domain.area


def connector(
    layout: FiberLayout,
    k,
    direction: str,
    overlap: bool = False,
    domain: Domain3 | None = None,
) -> Connector:
    """Parallelogram between the squares of cell ``k`` and its right/upper neighbour.

    ``overlap=False`` joins the facing square edges (half-width ``delta/2``);
    ``overlap=True`` uses half-width ``delta/4`` with edges inside the squares,
    the variant needed for the second-derivative estimates.
    """
    if direction not in ("horizontal", "vertical"):
        raise ValueError(f"direction must be 'horizontal' or 'vertical', got {direction!r}")
    k = np.asarray(k, dtype=np.int64)
    step = np.array([1, 0] if direction == "horizontal" else [0, 1])
    nb = k + step
    if domain is not None:
        cells = {tuple(c) for c in layout.interior_cells(domain).tolist()}
        for c in (k, nb):
            if tuple(c.tolist()) not in cells:
                raise ValueError(f"cell {tuple(c.tolist())} is not an interior cell of the domain")
    h = layout.eps * layout.delta / (4 if overlap else 2)
    a, b = layout.centers(k), layout.centers(nb)
    ax, tr = (0, 1) if direction == "horizontal" else (1, 0)
    L1 = float(b[ax] - a[ax] - 2 * h)
    m = float((b[tr] - a[tr]) / L1)
    anchor = np.empty(2)
    anchor[ax] = a[ax] + h
    anchor[tr] = a[tr] - h
    return Connector(L1=L1, L2=float(2 * h), m=m, anchor=(float(anchor[0]), float(anchor[1])), direction=direction)


def slope_bound(layout: FiberLayout, cells: np.ndarray | None = None) -> SlopeBound:
    """Maximal connector slope ``(1-2a-d)/(2a)`` and the realised maximum.

    The realised value is taken over ``cells`` and their right/upper
    neighbours (default: the cells covering the unit square).
    """
    bound = (1 - 2 * layout.alpha - layout.delta) / (2 * layout.alpha)
    if cells is None:
        n = max(1, math.ceil(1 / layout.eps))
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        cells = np.stack([ii.ravel(), jj.ravel()], axis=-1)
    cells = np.asarray(cells, dtype=np.int64)
    a = layout.centers(cells)
    h = layout.eps * layout.delta / 2
    realized = 0.0
    for ax in (0, 1):
        step = np.zeros(2, dtype=np.int64)
        step[ax] = 1
        b = layout.centers(cells + step)
        gap = b[:, ax] - a[:, ax] - 2 * h
        offset = b[:, 1 - ax] - a[:, 1 - ax]
        realized = max(realized, float(np.max(np.abs(offset) / gap)))
    return SlopeBound(bound=float(bound), realized=realized)
