"""Vector fields on the body and the quadrature used to measure them.

Integrals use a composite midpoint rule on tensor grids whose 1D partitions
are aligned with known break lines (cell edges, kink lines, square edges), so
no panel straddles a discontinuity of a piecewise-smooth integrand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .geometry import Domain3, FiberLayout

Bounds = Sequence[Sequence[float]]


class VectorField3:
    """A map ``R^3 -> R^m`` evaluated on arrays of points of shape ``(..., 3)``.

    ``gradient`` returns ``(..., m, 3)`` with columns ``(d1 u | d2 u | d3 u)``.
    Without it, gradients come from finite differences with step ``fd_step``.
    ``second(x, i, j)`` may supply exact second derivatives.
    """

    def __init__(
        self,
        evaluator: Callable,
        gradient: Callable | None = None,
        kind: str = "closed_form",
        domain: Domain3 | None = None,
        fd_step: float = 1e-5,
        second: Callable | None = None,
        name: str = "",
    ):
        self.evaluator = evaluator
        self.gradient = gradient
        self.kind = kind
        self.domain = domain
        self.fd_step = fd_step
        self.second = second
        self.name = name

    def __call__(self, x) -> np.ndarray:
        return self.evaluator(np.asarray(x, dtype=float))

    def grad(self, x) -> np.ndarray:
        return grad(self, x)

    def __repr__(self):
        return f"VectorField3({self.name or self.kind})"


class SampledField(VectorField3):
    """Values on a node grid ``origin + h*i`` interpolated trilinearly."""

    def __init__(self, origin, spacing, values, name: str = ""):
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = np.asarray(spacing, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 4 or min(self.values.shape[:3]) < 2:
            raise ValueError("sampled values need shape (n1, n2, n3, m) with n_i >= 2")
        axes = [self.origin[i] + self.spacing[i] * np.arange(self.values.shape[i]) for i in range(3)]
        self.axes = axes
        self._interp = RegularGridInterpolator(axes, self.values, method="linear", bounds_error=True)
        if self.origin[2] != 0.0:
            raise ValueError("sampled grids must start at x3 = 0")
        hi = [ax[-1] for ax in axes]
        dom = Domain3((axes[0][0], axes[1][0]), (hi[0], hi[1]), hi[2])
        super().__init__(self._evaluate, None, kind="sampled", domain=dom, fd_step=float(self.spacing.min()) / 2, name=name)

    def _evaluate(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        out = self._interp(x.reshape(-1, 3))
        return out.reshape(*shape, self.values.shape[-1])

    @classmethod
    def from_function(cls, f: Callable, domain: Domain3, n: Sequence[int], name: str = "") -> "SampledField":
        axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(domain.bounds3, n)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(f(X.reshape(-1, 3)), dtype=float).reshape(*X.shape[:3], -1)
        spacing = [ax[1] - ax[0] for ax in axes]
        return cls([ax[0] for ax in axes], spacing, vals, name=name)

    def save(self, path) -> None:
        """Text grid file: one header line, then one row of values per node (C order)."""
        n = self.values.shape
        header = (
            f"fiberlab-grid dims {n[0]} {n[1]} {n[2]} {n[3]} "
            f"spacing {' '.join(repr(float(v)) for v in self.spacing)} "
            f"origin {' '.join(repr(float(v)) for v in self.origin)}"
        )
        np.savetxt(path, self.values.reshape(-1, n[3]), header=header, fmt="%.17g")

    @classmethod
    def load(cls, path) -> "SampledField":
        with open(path) as fh:
            head = fh.readline().lstrip("#").split()
        if not head or head[0] != "fiberlab-grid":
            raise ValueError(f"{path}: not a grid file")
        dims = [int(v) for v in head[2:6]]
        spacing = [float(v) for v in head[7:10]]
        origin = [float(v) for v in head[11:14]]
        data = np.loadtxt(path, ndmin=2)
        return cls(origin, spacing, data.reshape(dims))


# -- derivatives ----------------------------------------------------------------


def _fd_gradient(u: VectorField3, x: np.ndarray, h: float) -> np.ndarray:
    f0 = np.asarray(u(x), dtype=float)
    dom = u.domain
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        if dom is None:
            cols.append((u(x + e) - u(x - e)) / (2 * h))
            continue
        lo, hi = dom.bounds3[i]
        fwd = x[..., i] - h < lo
        bwd = (x[..., i] + h > hi) & ~fwd
        cen = ~(fwd | bwd)
        d = np.empty_like(f0)
        # central where possible, one-sided second-order stencils near the boundary
        if np.any(cen):
            xc = x[cen]
            d[cen] = (u(xc + e) - u(xc - e)) / (2 * h)
        if np.any(fwd):
            xf = x[fwd]
            d[fwd] = (-3 * f0[fwd] + 4 * u(xf + e) - u(xf + 2 * e)) / (2 * h)
        if np.any(bwd):
            xb = x[bwd]
            d[bwd] = (3 * f0[bwd] - 4 * u(xb - e) + u(xb - 2 * e)) / (2 * h)
        cols.append(d)
    return np.stack(cols, axis=-1)


def grad(u: VectorField3, x, h: float | None = None) -> np.ndarray:
    """Gradient with columns ``(d1 u | d2 u | d3 u)``.

    Exact when ``u`` carries a gradient evaluator; otherwise central
    differences (one-sided near the boundary of ``u.domain``).
    """
    x = np.asarray(x, dtype=float)
    if u.gradient is not None and h is None:
        return u.gradient(x)
    if u.domain is not None and not np.all(u.domain.contains(x)):
        raise ValueError("finite-difference gradient requested outside the field's domain")
    return _fd_gradient(u, x, u.fd_step if h is None else h)


def directional(u: VectorField3, x, d) -> np.ndarray:
    """``d_d u = grad(u) d``."""
    return np.einsum("...ij,j->...i", grad(u, x), np.asarray(d, dtype=float))


def as_field(f: Callable, name: str = "") -> VectorField3:
    if isinstance(f, VectorField3):
        return f
    return VectorField3(f, name=name)


# -- quadrature -----------------------------------------------------------------


def axis_rule(lo: float, hi: float, max_width: float, breaks=(), min_panels: int = 2):
    """Midpoint nodes and weights on ``[lo, hi]`` split at ``breaks``.

    Every piece between consecutive break points gets equal panels of width
    at most ``max_width``.
    """
    if not hi > lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    max_width = min(max_width, (hi - lo) / min_panels)
    tol = 1e-12 * (hi - lo)
    inner = sorted(float(b) for b in np.unique(np.asarray(breaks, dtype=float)) if lo + tol < b < hi - tol)
    pts = [lo, *inner, hi]
    nodes, weights = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / max_width - 1e-9))
        w = (b - a) / n
        nodes.append(a + w * (np.arange(n) + 0.5))
        weights.append(np.full(n, w))
    return np.concatenate(nodes), np.concatenate(weights)


def gauss_rule(lo: float, hi: float, n: int):
    """Gauss-Legendre nodes and weights on ``[lo, hi]``."""
    t, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (t + 1.0), half * w


@dataclass(frozen=True)
class QuadratureSpec:
    """Panel policy for the midpoint rule.

    In-plane panels are at most ``eps / panels_per_eps`` wide when a lattice
    scale is known, else ``1 / n_per_unit``; along ``x3`` at most
    ``1 / n3_per_unit``.  ``n1, n2, n3`` fix the panel counts per axis instead.
    """

    panels_per_eps: int = 8
    n_per_unit: int = 16
    n3_per_unit: int = 4
    n1: int | None = None
    n2: int | None = None
    n3: int | None = None
    min_panels: int = 2
    chunk: int = 250_000

    def __post_init__(self):
        for n in (self.n1, self.n2, self.n3):
            if n is not None and n < 2:
                raise ValueError("panel counts must be at least 2")
        if self.panels_per_eps < 1 or self.n_per_unit < 1 or self.n3_per_unit < 1:
            raise ValueError("panel densities must be positive")

    def widths(self, bounds: Bounds, eps: float | None = None) -> list[float]:
        fixed = (self.n1, self.n2, self.n3)
        out = []
        for i, (lo, hi) in enumerate(bounds):
            if fixed[i] is not None:
                out.append((hi - lo) / fixed[i])
            elif i == 2:
                out.append(1.0 / self.n3_per_unit)
            elif eps is not None:
                out.append(eps / self.panels_per_eps)
            else:
                out.append(1.0 / self.n_per_unit)
        return out

    def rules(self, bounds: Bounds, eps: float | None = None, breaks=None):
        breaks = breaks or [()] * len(bounds)
        widths = self.widths(bounds, eps)
        return [axis_rule(lo, hi, w, br, self.min_panels) for (lo, hi), w, br in zip(bounds, widths, breaks)]


DEFAULT_QUAD = QuadratureSpec()


def tensor_sum(func: Callable, rules, chunk: int = DEFAULT_QUAD.chunk):
    """``sum_i w_i func(x_i)`` over the tensor grid built from 1D ``rules``.

    ``func`` maps ``(N, dim)`` nodes to ``(N,)`` or ``(N, k)`` values.  The
    first axis is processed in fixed-size blocks so memory stays bounded and
    the summation order is reproducible.
    """
    (n0, w0), *rest = rules
    rest_nodes = np.meshgrid(*[r[0] for r in rest], indexing="ij")
    rest_w = np.ones(1)
    for _, w in rest:
        rest_w = np.multiply.outer(rest_w, w)
    rest_w = rest_w.ravel()
    rest_pts = np.stack([g.ravel() for g in rest_nodes], axis=-1)
    per = len(rest_w)
    rows = max(1, chunk // per)
    total = 0.0
    for s in range(0, len(n0), rows):
        a = n0[s : s + rows]
        pts = np.concatenate([np.repeat(a, per)[:, None], np.tile(rest_pts, (len(a), 1))], axis=1)
        weights = np.outer(w0[s : s + rows], rest_w).ravel()
        vals = np.asarray(func(pts), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite field values encountered during quadrature")
        total = total + np.tensordot(weights, vals, axes=(0, 0))
    return total


def layout_breaks(layout: FiberLayout | None, bounds: Bounds, kinks: bool = True) -> list:
    """Break points per axis induced by ``layout`` (none along ``x3``)."""
    if layout is None:
        return [()] * len(bounds)
    out = [layout.breakpoints(lo, hi, axis=i, kinks=kinks) for i, (lo, hi) in enumerate(bounds[:2])]
    return out + [()] * (len(bounds) - 2)


def magnitude(v: np.ndarray, n: int) -> np.ndarray:
    """Pointwise Euclidean/Frobenius norm of values for ``n`` nodes."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return np.abs(v)
    return np.sqrt(np.sum(v.reshape(n, -1) ** 2, axis=1))


def region_mask(region: str, layout: FiberLayout | None):
    if region in ("omega", "box"):
        return None
    if layout is None:
        raise ValueError(f"region {region!r} needs a fiber layout")
    if region == "rigid":
        return lambda x: layout.is_rigid(x)
    if region in ("soft", "complement"):
        return lambda x: ~layout.is_rigid(x)
    raise ValueError(f"unknown region {region!r}")


def integrate(
    f: Callable,
    bounds: Bounds,
    quad: QuadratureSpec = DEFAULT_QUAD,
    layout: FiberLayout | None = None,
    region: str = "omega",
    breaks=None,
):
    """Midpoint integral of ``f`` over a box, optionally masked to a region."""
    eps = layout.eps if layout is not None else None
    if breaks is None:
        breaks = layout_breaks(layout, bounds)
    rules = quad.rules(bounds, eps, breaks)
    mask = region_mask(region, layout)
    if mask is None:
        return tensor_sum(f, rules, quad.chunk)

    def masked(x):
        v = np.asarray(f(x), dtype=float)
        m = mask(x)
        return np.where(m.reshape(m.shape + (1,) * (v.ndim - 1)), v, 0.0)

    return tensor_sum(masked, rules, quad.chunk)


def fiber_nodes(layout: FiberLayout, bounds: Bounds, quad: QuadratureSpec = DEFAULT_QUAD, chunk_cells: int | None = None):
    """Midpoint nodes and weights covering the inner squares clipped to a box.

    Yields ``(points, weights)`` blocks of whole cells; each clipped square
    gets the same number of panels per axis, so the rule is exact for
    integrands that are constant on fibers.
    """
    (a1, b1), (a2, b2) = bounds[0], bounds[1]
    e = layout.eps
    i0, i1 = math.floor(a1 / e), math.ceil(b1 / e) - 1
    j0, j1 = math.floor(a2 / e), math.ceil(b2 / e) - 1
    ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
    cells = np.stack([ii.ravel(), jj.ravel()], axis=-1)
    lo, hi = layout.square_bounds(cells)
    lo = np.maximum(lo, [a1, a2])
    hi = np.minimum(hi, [b1, b2])
    keep = np.all(hi > lo, axis=-1)
    lo, hi = lo[keep], hi[keep]
    m = max(2, math.ceil(layout.delta * quad.panels_per_eps - 1e-9))
    t = (np.arange(m) + 0.5) / m
    if len(bounds) > 2:
        z, wz = quad.rules([bounds[2]])[0]
    else:
        z, wz = np.zeros(0), np.ones(1)
    per = m * m * len(wz)
    chunk_cells = chunk_cells or max(1, quad.chunk // per)
    for s in range(0, len(lo), chunk_cells):
        l, h = lo[s : s + chunk_cells], hi[s : s + chunk_cells]
        span = h - l
        x1 = l[:, 0:1] + span[:, 0:1] * t  # (c, m)
        x2 = l[:, 1:2] + span[:, 1:2] * t
        w = (span[:, 0] * span[:, 1] / (m * m))[:, None, None, None] * np.ones((1, m, m, len(wz))) * wz
        c = len(l)
        X1 = np.broadcast_to(x1[:, :, None, None], (c, m, m, len(wz)))
        X2 = np.broadcast_to(x2[:, None, :, None], (c, m, m, len(wz)))
        cols = [X1.ravel(), X2.ravel()]
        if len(bounds) > 2:
            cols.append(np.broadcast_to(z, (c, m, m, len(wz))).ravel())
        yield np.stack(cols, axis=-1), w.ravel()


def fiber_integral(f: Callable, layout: FiberLayout, bounds: Bounds, quad: QuadratureSpec = DEFAULT_QUAD):
    """Integral of ``f`` over the inner squares (times the ``x3`` range) inside ``bounds``."""
    if layout.shape != "square":
        return integrate(f, bounds, quad, layout, region="rigid")
    total = 0.0
    for pts, w in fiber_nodes(layout, bounds, quad):
        vals = np.asarray(f(pts), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite field values encountered during quadrature")
        total = total + np.tensordot(w, vals, axes=(0, 0))
    return total


def lp_norm(
    f: Callable,
    p: float,
    domain: Domain3 | None = None,
    region: str = "omega",
    layout: FiberLayout | None = None,
    quad: QuadratureSpec = DEFAULT_QUAD,
    box: Bounds | None = None,
    breaks=None,
) -> float:
    """``(int_region |f|^p)^(1/p)`` for scalar, vector or matrix valued ``f``.

    ``region`` is ``"omega"`` (the whole box), ``"rigid"``, ``"soft"``
    (nodes classified by ``layout.is_rigid``).  ``box`` replaces the
    domain's bounds, for sub-boxes or purely planar integrals.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if box is None:
        if domain is None:
            raise ValueError("lp_norm needs a domain or a box")
        box = domain.bounds3

    def density(x):
        v = f(x)
        return magnitude(v, len(x)) ** p

    total = integrate(density, box, quad, layout, region, breaks)
    return float(total) ** (1.0 / p)


def translate_diff(
    f: Callable,
    xi,
    p: float,
    region: Bounds,
    omega: Bounds | None = None,
    quad: QuadratureSpec = DEFAULT_QUAD,
    breaks=None,
    eps: float | None = None,
) -> float:
    """``int_{U'} |f(x' + xi) - f(x')|^p dx'`` for a field on the cross-section.

    ``breaks`` lists the discontinuity lines of ``f`` per axis; their copies
    shifted by ``-xi`` are added so the rule stays aligned.  With ``omega``
    given, ``|xi|`` must stay below ``dist(U', boundary of omega)``.
    """
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return 0.0
    (a1, b1), (a2, b2) = region
    if omega is not None:
        (o1, c1), (o2, c2) = omega
        margin = min(a1 - o1, c1 - b1, a2 - o2, c2 - b2)
        if not np.linalg.norm(xi) < margin:
            raise ValueError(f"|xi|={np.linalg.norm(xi):.3g} is not below dist(U', boundary)={margin:.3g}")
    if breaks is None:
        breaks = [(), ()]
    shifted = [np.concatenate([np.asarray(b, dtype=float), np.asarray(b, dtype=float) - xi[i]]) for i, b in enumerate(breaks)]
    rules = quad.rules(region, eps, shifted)

    def density(x):
        d = np.asarray(f(x + xi), dtype=float) - np.asarray(f(x), dtype=float)
        return magnitude(d, len(x)) ** p

    return float(tensor_sum(density, rules, quad.chunk))


def second_diff(u: VectorField3, x, i: int, j: int, h: float, bounds: Bounds | None = None) -> np.ndarray:
    """Central second difference approximating ``d_i d_j u`` at ``x``.

    Near the boundary the stencil centre is moved inward by at most ``h``
    so no evaluation leaves ``bounds``.
    """
    x = np.array(x, dtype=float)
    c = x.copy()
    if bounds is not None:
        for a in {i, j}:
            lo, hi = bounds[a]
            if hi - lo < 2 * h:
                raise ValueError(f"axis {a} too thin for a second-difference stencil of step {h}")
            c[..., a] = np.clip(x[..., a], lo + h, hi - h)
    ei = np.zeros(3)
    ei[i] = h
    if i == j:
        return (u(c + ei) - 2 * u(c) + u(c - ei)) / h**2
    ej = np.zeros(3)
    ej[j] = h
    return (u(c + ei + ej) - u(c + ei - ej) - u(c - ei + ej) + u(c - ei - ej)) / (4 * h * h)


def second_diff_norm(
    u: VectorField3,
    i: int,
    j: int,
    p: float,
    domain: Domain3 | None = None,
    quad: QuadratureSpec = DEFAULT_QUAD,
    layout: FiberLayout | None = None,
    h: float | None = None,
    box: Bounds | None = None,
) -> float:
    """``||d_i d_j u||_{L^p}`` over the domain (or ``box``).

    Uses ``u.second`` when present, else second differences with ``h``
    defaulting to half the in-plane panel width.
    """
    if i not in (0, 1) or j not in (0, 1):
        raise ValueError("second differences are taken in the cross-section axes 0 and 1")
    if box is None:
        if domain is None:
            raise ValueError("second_diff_norm needs a domain or a box")
        box = domain.bounds3
    stencil_bounds = domain.bounds3 if domain is not None else box
    if u.second is not None and h is None:
        def g(x):
            return u.second(x, i, j)
    else:
        if h is None:
            h = 0.5 * min(quad.widths(box, layout.eps if layout else None)[:2])

        def g(x):
            return second_diff(u, x, i, j, h, stencil_bounds)

    return lp_norm(g, p, box=box, quad=quad, layout=layout, breaks=layout_breaks(layout, box))
