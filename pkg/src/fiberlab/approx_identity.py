"""Piecewise-affine approximation of the identity that collapses fibers.

On the shifted period ``Z = [-a, 1-a)^2`` the unscaled map is

    z / (2a)            on [-a, a)^2
    (z1/(2a), 1/2)      on [-a, a) x [a, 1-a)
    (1/2, 1/2)          on [a, 1-a)^2
    (1/2, z2/(2a))      on [a, 1-a) x [-a, a)

extended by ``phi(z + k) = phi(z) + k``.  The map is separable: each
coordinate goes through the same 1D profile ``g``, linear with slope
``1/(2a)`` near the integers and flat in between.  Everything here is
evaluated by case split, never sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Domain3, FiberLayout


def _split(t, alpha: float):
    """Period index ``k`` and offset ``r in [-alpha, 1-alpha)`` with ``t = k + r``."""
    t = np.asarray(t, dtype=float)
    k = np.floor(t + alpha)
    return k, t - k


def profile(t, alpha: float) -> np.ndarray:
    """The 1D profile ``g``; ``phi(z) = (g(z1), g(z2))``."""
    k, r = _split(t, alpha)
    return k + np.where(r < alpha, r / (2 * alpha), 0.5)


def profile_slope(t, alpha: float) -> np.ndarray:
    """Derivative of ``g`` with the half-open piece convention."""
    _, r = _split(t, alpha)
    return np.where(r < alpha, 1.0 / (2 * alpha), 0.0)


def _profile_primitive(t, alpha: float) -> np.ndarray:
    """A 1-periodic primitive of ``g(t) - t`` (which has zero mean per period)."""
    _, r = _split(t, alpha)
    c = 1.0 / (2 * alpha) - 1.0
    lin = 0.5 * c * (r * r - alpha * alpha)
    flat = 0.5 * (r - alpha) - 0.5 * (r * r - alpha * alpha)
    return np.where(r < alpha, lin, flat)


def phi(z_prime, alpha: float) -> np.ndarray:
    z = np.asarray(z_prime, dtype=float)
    return profile(z, alpha)


def phi_grad(z_prime, alpha: float) -> np.ndarray:
    """Exact ``2x2`` gradient (diagonal, piecewise constant)."""
    s = profile_slope(z_prime, alpha)
    out = np.zeros(s.shape[:-1] + (2, 2))
    out[..., 0, 0] = s[..., 0]
    out[..., 1, 1] = s[..., 1]
    return out


def piece_index(z_prime, alpha: float) -> np.ndarray:
    """Which of the four pieces (1..4) contains each point."""
    _, r = _split(z_prime, alpha)
    lo = r < alpha
    return np.select(
        [lo[..., 0] & lo[..., 1], lo[..., 0] & ~lo[..., 1], ~lo[..., 0] & ~lo[..., 1]],
        [1, 2, 3],
        default=4,
    )


def piece_gradient_norms(alpha: float) -> dict[int, float]:
    """Frobenius norm of the gradient on each piece."""
    s = 1.0 / (2 * alpha)
    return {1: math.sqrt(2.0) * s, 2: s, 3: 0.0, 4: s}


def piece_areas(alpha: float) -> dict[int, float]:
    return {1: 4 * alpha**2, 2: 2 * alpha * (1 - 2 * alpha), 3: (1 - 2 * alpha) ** 2, 4: 2 * alpha * (1 - 2 * alpha)}


def mean_shift(alpha: float, eps: float, rect) -> np.ndarray:
    """Shift ``d`` with ``int_U (eps*phi(x/eps) + d) = int_U x`` for a rectangle ``U``.

    Exact: the primitive of ``g(t) - t`` is known in closed form.
    """
    d = np.zeros(2)
    for i, (a, b) in enumerate(rect):
        if not b > a:
            raise ValueError(f"degenerate rectangle side {(a, b)}")
        excess = eps * eps * (_profile_primitive(b / eps, alpha) - _profile_primitive(a / eps, alpha))
        d[i] = -float(excess) / (b - a)
    return d


@dataclass(frozen=True)
class ApproxIdentity:
    """``phi_eps(x') = eps*phi(x'/eps) + d_eps`` normalised on the rectangle ``U``."""

    alpha: float
    epsilon: float
    U: tuple[tuple[float, float], tuple[float, float]] | None = None
    d_eps: tuple[float, float] | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        if not float(self.epsilon) > 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if self.U is not None:
            U = tuple((float(a), float(b)) for a, b in self.U)
            object.__setattr__(self, "U", U)
        if self.d_eps is None:
            d = (0.0, 0.0) if self.U is None else tuple(mean_shift(self.alpha, self.epsilon, self.U))
            object.__setattr__(self, "d_eps", (float(d[0]), float(d[1])))

    @classmethod
    def for_layout(cls, layout: FiberLayout, domain: Domain3 | None = None) -> "ApproxIdentity":
        U = domain.cross_section if domain is not None else None
        return cls(layout.alpha, layout.eps, U)

    @property
    def d(self) -> np.ndarray:
        return np.array(self.d_eps)

    def __call__(self, x_prime) -> np.ndarray:
        return phi_eps(x_prime, self)

    def grad(self, x_prime) -> np.ndarray:
        return phi_grad(np.asarray(x_prime, dtype=float)[..., :2] / self.epsilon, self.alpha)

    def slopes(self, x_prime) -> np.ndarray:
        """Diagonal of the gradient, shape ``(..., 2)``."""
        return profile_slope(np.asarray(x_prime, dtype=float)[..., :2] / self.epsilon, self.alpha)

    def collapsed_point(self, k) -> np.ndarray:
        """The single value taken on the fiber cross-section of cell ``k``."""
        k = np.asarray(k, dtype=float)
        return self.epsilon * (k + 0.5) + self.d


def phi_eps(x_prime, ident: ApproxIdentity) -> np.ndarray:
    x = np.asarray(x_prime, dtype=float)[..., :2]
    return ident.epsilon * profile(x / ident.epsilon, ident.alpha) + ident.d


def sup_deviation(ident: ApproxIdentity, rect) -> float:
    """Exact ``sup_U |phi_eps(x') - x'|`` for a rectangle ``U``.

    Each component of ``phi_eps - id`` is a piecewise-linear function of a
    single coordinate, so the supremum of the norm combines the extreme
    absolute values found at break points and ends.
    """
    e, a = ident.epsilon, ident.alpha
    total = 0.0
    for i, (lo, hi) in enumerate(rect):
        j = np.arange(math.floor(lo / e) - 1, math.ceil(hi / e) + 2, dtype=float)
        pts = np.concatenate([e * j, e * (j + a), e * (j - a), [lo, hi]])
        pts = pts[(pts >= lo) & (pts <= hi)]
        dev = e * profile(pts / e, a) + ident.d[i] - pts
        # the profile is continuous, so one-sided limits at the break points equal the values
        total += float(np.max(np.abs(dev))) ** 2
    return math.sqrt(total)


def image_boxes(ident: ApproxIdentity, cells: np.ndarray, offset: float):
    """Images of ``eps*(k + [offset, offset+1)^2)`` under ``phi_eps``.

    ``g`` is continuous and nondecreasing, so the image of ``[l, u)`` is the
    interval from ``g(l)`` to ``g(u)``, closed at the top exactly when ``g``
    is flat just below ``u``.  Returns ``lower, upper`` (``(n, 2)`` each) and
    the per-axis closedness flag of the upper ends.
    """
    e, a = ident.epsilon, ident.alpha
    cells = np.asarray(cells, dtype=float)
    lo = cells + offset
    hi = lo + 1.0
    lower = e * profile(lo, a) + ident.d
    upper = e * profile(hi, a) + ident.d
    # the upper end is attained exactly when the profile is flat just below it
    closed_top = bool(profile_slope(np.array(offset + 1.0 - 1e-9), a) == 0.0)
    return lower, upper, closed_top


def _pairwise_overlaps(lower, upper, closed_top: bool):
    """Counts of pairs whose boxes meet as sets / in their interiors."""
    n = len(lower)
    meet = 0
    interior = 0
    for s in range(n):
        l1, u1 = lower[s], upper[s]
        l2, u2 = lower[s + 1 :], upper[s + 1 :]
        if closed_top:
            ax_meet = (l2 <= u1) & (l1 <= u2)
        else:
            ax_meet = (l2 < u1) & (l1 < u2)
        ax_int = (l2 < u1) & (l1 < u2)
        meet += int(np.sum(np.all(ax_meet, axis=1)))
        interior += int(np.sum(np.all(ax_int, axis=1)))
    return meet, interior


def verify_properties(ident: ApproxIdentity, layout: FiberLayout, domain: Domain3 | None = None, samples: int = 64, seed: int = 0) -> dict:
    """Check the four structural properties of ``phi_eps`` and return witnesses.

    i)   largest piecewise gradient norm equals ``sqrt(2)/(2a)`` and is ``< 1/a``;
    ii)  ``phi_eps`` takes one value on each fiber cross-section (bit-exact);
    iii) images of distinct shifted periods overlap only on edges, images of
         distinct lattice cells are disjoint half-open squares;
    iv)  the exact uniform distance to the identity.
    """
    if not math.isclose(layout.eps, ident.epsilon, rel_tol=1e-15) or layout.alpha != ident.alpha:
        raise ValueError("identity approximation and layout must share epsilon and alpha")
    a, e = ident.alpha, ident.epsilon
    rect = ident.U if ident.U is not None else (domain.cross_section if domain is not None else ((0.0, 1.0), (0.0, 1.0)))
    dom = domain if domain is not None else Domain3.box(rect[0], rect[1])
    rng = np.random.default_rng(seed)

    # (i) gradient norms: evaluate on every piece and on random points
    norms = piece_gradient_norms(a)
    probe = np.vstack([rng.uniform(-1, 2, size=(4096, 2)), [[0.0, 0.0], [0.0, 0.5], [0.5, 0.5], [0.5, 0.0]]])
    measured = float(np.max(np.linalg.norm(phi_grad(probe, a), axis=(-2, -1))))
    target = math.sqrt(2.0) / (2 * a)
    rep_i = {
        "pass": abs(max(norms.values()) - target) <= 1e-12 and abs(measured - target) <= 1e-12 and measured < 1 / a,
        "piece_norms": [norms[k] for k in (1, 2, 3, 4)],
        "sup_norm": measured,
        "bound": 1 / a,
    }

    # (ii) constancy on fibers
    cells = layout.interior_cells(dom)
    worst_cell = None
    for k in cells:
        pts = _fiber_samples(layout, k, samples, rng)
        vals = phi_eps(pts, ident)
        if not np.all(vals == vals[0]):
            worst_cell = tuple(int(v) for v in k)
            break
    rep_ii = {"pass": worst_cell is None and len(cells) > 0, "cells_checked": int(len(cells)), "failing_cell": worst_cell}

    # (iii) images of shifted periods and of lattice cells
    (a1, b1), (a2, b2) = rect
    zi = [np.arange(math.ceil(lo / e + a - 1e-9), math.floor(hi / e - (1 - a) + 1e-9) + 1) for lo, hi in rect]
    zc = np.stack([g.ravel() for g in np.meshgrid(*zi, indexing="ij")], axis=-1) if all(len(z) for z in zi) else np.zeros((0, 2))
    lowZ, upZ, closedZ = image_boxes(ident, zc, -a)
    meetZ, intZ = _pairwise_overlaps(lowZ, upZ, closedZ)
    lowC, upC, closedC = image_boxes(ident, cells, 0.0)
    meetC, intC = _pairwise_overlaps(lowC, upC, closedC)
    sides = np.concatenate([upZ - lowZ, upC - lowC]) if len(zc) + len(cells) else np.zeros((0, 2))
    rep_iii = {
        "pass": intZ == 0 and meetC == 0 and intC == 0 and bool(np.allclose(sides, e, rtol=1e-12)),
        "periods": int(len(zc)),
        "period_images_closed": bool(closedZ),
        "period_interior_overlaps": intZ,
        "period_edge_contacts": meetZ,
        "cells": int(len(cells)),
        "cell_images_closed": bool(closedC),
        "cell_overlaps": meetC,
    }

    # (iv) uniform distance
    sup = sup_deviation(ident, rect)
    rep_iv = {"pass": sup <= e * math.sqrt(2.0) * (0.5 - a) + float(np.linalg.norm(ident.d)) + 1e-15, "sup_distance": sup}
    return {"i": rep_i, "ii": rep_ii, "iii": rep_iii, "iv": rep_iv}


def _fiber_samples(layout: FiberLayout, k, n: int, rng) -> np.ndarray:
    """Random points of the cross-section of cell ``k`` plus points hugging its corners."""
    lo, hi = layout.square_bounds(np.asarray(k))
    span = hi - lo
    inner = lo + span * rng.random((n, 2))
    tiny = 1e-12 * layout.eps
    corners = np.array([[lo[0] + tiny, lo[1] + tiny], [hi[0] - tiny, lo[1] + tiny], [lo[0] + tiny, hi[1] - tiny], [hi[0] - tiny, hi[1] - tiny]])
    pts = np.vstack([inner, corners])
    if layout.shape == "polygon":
        k = np.asarray(k)
        poly = np.asarray(layout.polygon)
        edge = layout.eps * (k + poly)
        # polygon vertices pulled slightly towards the centroid
        c = edge.mean(axis=0)
        pts = np.vstack([pts, c + (1 - 1e-9) * (edge - c)])
        pts = pts[layout.is_rigid(pts)]
    return pts
