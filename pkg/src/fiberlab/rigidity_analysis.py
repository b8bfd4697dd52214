"""Rigidity diagnostics for deformation sequences.

Per-fiber rotations are extracted from a field, turned into a piecewise
rigid comparison map and a piecewise-constant director field, whose
translation moduli are measured.  Also here: the explicit lower bound for
the energy needed to switch between two affine maps across a parallelogram,
the two-phase energy, and the second-difference diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .fields import (
    DEFAULT_QUAD,
    QuadratureSpec,
    VectorField3,
    axis_rule,
    fiber_integral,
    gauss_rule,
    grad,
    layout_breaks,
    lp_norm,
    second_diff_norm,
    tensor_sum,
    translate_diff,
)
from .geometry import Domain3, FiberLayout
from .so3 import dist_SO3, project_SO3

__all__ = [
    "project_SO3",
    "dist_SO3",
    "PiecewiseRotationField",
    "extract_rotations",
    "piecewise_rigid_error",
    "fk_modulus",
    "difference_quotient_norm",
    "lemma31_rhs",
    "Lemma31Config",
    "lemma31_verify",
    "lemma31_minimize",
    "sheared_interpolant",
    "perturbed_interpolant",
    "v_field",
    "FKRow",
    "FKResult",
    "EnergyDensitySpec",
    "energy",
    "regularized_check",
    "deviation_measure",
]


# -- per-fiber rotations ---------------------------------------------------------


@dataclass
class PiecewiseRotationField:
    """Rotations ``R_k`` and shifts ``b_k`` on a rectangular block of cells."""

    layout: FiberLayout
    cells: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    _grid: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if len(self.cells) == 0:
            raise ValueError("no cells to hold rotations")
        lo = self.cells.min(axis=0)
        hi = self.cells.max(axis=0)
        shape = tuple(int(v) for v in hi - lo + 1)
        index = np.full(shape, -1, dtype=np.int64)
        index[tuple((self.cells - lo).T)] = np.arange(len(self.cells))
        self._grid = (lo, index)

    @property
    def box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """Bounding box of the covered cells."""
        e = self.layout.eps
        lo = self.cells.min(axis=0)
        hi = self.cells.max(axis=0) + 1
        return (e * lo[0], e * hi[0]), (e * lo[1], e * hi[1])

    def lookup(self, x_prime) -> np.ndarray:
        """Row index of the containing cell, ``-1`` outside the block."""
        lo, index = self._grid
        k = self.layout.cell_of(x_prime) - lo
        inside = np.all((k >= 0) & (k < np.array(index.shape)), axis=-1)
        out = np.full(k.shape[:-1], -1, dtype=np.int64)
        out[inside] = index[k[inside][:, 0], k[inside][:, 1]]
        return out

    def sigma(self, x_prime) -> np.ndarray:
        """Piecewise-constant director ``R_k e3`` (NaN outside the block)."""
        idx = self.lookup(x_prime)
        out = self.rotations[idx, :, 2]
        out[idx < 0] = np.nan
        return out

    def rotation_at(self, x_prime) -> np.ndarray:
        idx = self.lookup(x_prime)
        out = self.rotations[idx]
        out[idx < 0] = np.nan
        return out

    def w(self, x) -> np.ndarray:
        """Piecewise rigid map ``R_k x + b_k`` on each cuboid."""
        x = np.asarray(x, dtype=float)
        idx = self.lookup(x[..., :2])
        out = np.einsum("...ij,...j->...i", self.rotations[idx], x) + self.translations[idx]
        out[idx < 0] = np.nan
        return out

    def table(self) -> list[list]:
        """Rows ``k1, k2, R11..R33, b1, b2, b3``."""
        return [
            [int(k[0]), int(k[1]), *map(float, R.ravel()), *map(float, b)]
            for k, R, b in zip(self.cells, self.rotations, self.translations)
        ]


def _square_rule(layout: FiberLayout, quad: QuadratureSpec) -> np.ndarray:
    """Midpoint offsets inside the inner square relative to its centre."""
    m = max(2, math.ceil(layout.delta * quad.panels_per_eps - 1e-9))
    side = layout.eps * layout.delta
    return side * ((np.arange(m) + 0.5) / m - 0.5)


def extract_rotations(
    u: VectorField3,
    layout: FiberLayout,
    domain: Domain3,
    quad: QuadratureSpec = DEFAULT_QUAD,
    window=None,
    chunk_cells: int = 4096,
) -> PiecewiseRotationField:
    """Average ``grad u`` over each inner square times ``(0, L)``, project to SO(3).

    ``b_k`` is the mean of ``u(x) - R_k x`` over the same nodes.  Only cells
    whose closed cuboid lies in the body (and in ``window``) are used.
    """
    cells = layout.interior_cells(domain, window)
    if len(cells) == 0:
        raise ValueError("no interior cells: refine epsilon or enlarge the window")
    off = _square_rule(layout, quad)
    z, _ = axis_rule(0.0, domain.L, 1.0 / quad.n3_per_unit, (), quad.min_panels)
    o1, o2, o3 = np.meshgrid(off, off, z, indexing="ij")
    local = np.stack([o1.ravel(), o2.ravel(), o3.ravel()], axis=-1)
    n = len(local)
    rotations = np.empty((len(cells), 3, 3))
    translations = np.empty((len(cells), 3))
    for s in range(0, len(cells), chunk_cells):
        block = cells[s : s + chunk_cells]
        centers = layout.centers(block)
        pts = np.repeat(np.c_[centers, np.zeros(len(block))], n, axis=0) + np.tile(local, (len(block), 1))
        G = grad(u, pts).reshape(len(block), n, 3, 3).mean(axis=1)
        bad = np.flatnonzero(~(np.linalg.det(G) > 0))
        if len(bad):
            k = tuple(int(v) for v in block[bad[0]])
            raise ValueError(f"averaged gradient on cell {k} has det <= 0")
        R = project_SO3(G)
        U = u(pts).reshape(len(block), n, 3)
        Rx = np.einsum("cij,cnj->cni", R, pts.reshape(len(block), n, 3))
        rotations[s : s + len(block)] = R
        translations[s : s + len(block)] = (U - Rx).mean(axis=1)
    return PiecewiseRotationField(layout, cells, rotations, translations)


def piecewise_rigid_error(u: VectorField3, prf: PiecewiseRotationField, p: float, domain: Domain3, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``||u - w||_{L^p}`` over the union of the cuboids carrying rotations."""
    (a1, b1), (a2, b2) = prf.box
    box = ((a1, b1), (a2, b2), (0.0, domain.L))
    return lp_norm(lambda x: u(x) - prf.w(x), p, box=box, layout=prf.layout, quad=quad)


# -- translation moduli --------------------------------------------------------


class FKRow(NamedTuple):
    xi: tuple[float, float]
    xi_norm: float
    value: float
    ratio: float
    slack: float


class FKResult(NamedTuple):
    rows: list
    C: float
    eps: float


def _cell_breaks(layout: FiberLayout, region) -> list:
    return [layout.breakpoints(lo, hi, axis=i, kinks=False, squares=False) for i, (lo, hi) in enumerate(region)]


def fk_modulus(prf: PiecewiseRotationField, xi_list: Sequence, p: float, region, omega=None) -> FKResult:
    """``int_{U'} |Sigma(x'+xi) - Sigma(x')|^p`` per ``xi`` and the smallest ``C``
    with ``value <= C (|xi|^p + eps^p)`` on the list.

    With ``omega`` given, ``|xi|`` must stay below half the distance from
    ``U'`` to its boundary; in any case ``U' + xi`` must stay inside the block
    of cells carrying rotations.
    """
    eps = prf.layout.eps
    block = prf.box
    (a1, b1), (a2, b2) = region
    margin = min(a1 - block[0][0], block[0][1] - b1, a2 - block[1][0], block[1][1] - b2)
    if omega is not None:
        (o1, c1), (o2, c2) = omega
        reach = min(a1 - o1, c1 - b1, a2 - o2, c2 - b2) / 2
    else:
        reach = math.inf
    quad = QuadratureSpec(panels_per_eps=1)
    breaks = _cell_breaks(prf.layout, region)
    values = []
    for xi in xi_list:
        xi = np.asarray(xi, dtype=float)
        size = float(np.linalg.norm(xi))
        if size and not size < reach:
            raise ValueError(f"|xi|={size:.3g} must stay below half the distance {2 * reach:.3g} to the boundary")
        if np.any(np.abs(xi) > margin + 1e-12):
            raise ValueError(f"shift {xi.tolist()} leaves the block of extracted cells")
        values.append(translate_diff(prf.sigma, xi, p, region, quad=quad, breaks=breaks, eps=eps))
    scale = [float(np.linalg.norm(np.asarray(xi, dtype=float))) ** p + eps**p for xi in xi_list]
    C = max((v / s for v, s in zip(values, scale)), default=0.0)
    rows = [
        FKRow(tuple(float(c) for c in xi), float(np.linalg.norm(np.asarray(xi, dtype=float))), float(v), float(v / s), float(C * s - v))
        for xi, v, s in zip(xi_list, values, scale)
    ]
    return FKResult(rows, float(C), eps)


def difference_quotient_norm(Sigma: Callable, xi_list: Sequence, p: float, region, omega=None, quad: QuadratureSpec = DEFAULT_QUAD, breaks=None) -> float:
    """``max_xi ||Sigma(. + xi) - Sigma||_{L^p(U')} / |xi|``."""
    best = 0.0
    for xi in xi_list:
        xi = np.asarray(xi, dtype=float)
        if not np.any(xi):
            continue
        val = translate_diff(Sigma, xi, p, region, omega=omega, quad=quad, breaks=breaks)
        best = max(best, val ** (1.0 / p) / float(np.linalg.norm(xi)))
    return best


# -- switching between affine maps ---------------------------------------------------


def lemma31_rhs(p: float, L1: float, L2: float, L3: float, m: float, A1, A2) -> float:
    """``L3^(p+1) L2 / (2^p (p+1) (1+m^2)^(p/2) L1^(p-1)) |(A2 - A1) e3|^p``."""
    if min(L1, L2, L3) <= 0:
        raise ValueError("side lengths must be positive")
    if p < 1:
        raise ValueError("p must be >= 1")
    jump = np.linalg.norm((np.asarray(A2, dtype=float) - np.asarray(A1, dtype=float))[:, 2])
    return float(L3 ** (p + 1) * L2 / (2**p * (p + 1) * (1 + m * m) ** (p / 2) * L1 ** (p - 1)) * jump**p)


@dataclass
class Lemma31Config:
    """Parallelogram prism ``{0<x1<L1, m x1<x2<m x1+L2, 0<x3<L3}`` with affine
    traces ``w_i(x) = A_i x + b_i`` on the faces ``x1 = 0`` and ``x1 = L1``."""

    p: float
    L1: float
    L2: float
    L3: float
    m: float
    A1: np.ndarray
    b1: np.ndarray
    A2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("A1", "A2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3, 3))
        for name in ("b1", "b2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    @property
    def direction(self) -> np.ndarray:
        return np.array([1.0, self.m, 0.0]) / math.sqrt(1 + self.m**2)

    def w1(self, x):
        return np.asarray(x) @ self.A1.T + self.b1

    def w2(self, x):
        return np.asarray(x) @ self.A2.T + self.b2

    def to_physical(self, y) -> np.ndarray:
        """Sheared coordinates ``y`` in the box ``Q`` to points of ``E``."""
        y = np.asarray(y, dtype=float)
        x = y.copy()
        x[..., 1] = y[..., 1] + self.m * y[..., 0]
        return x

    def rhs(self) -> float:
        return lemma31_rhs(self.p, self.L1, self.L2, self.L3, self.m, self.A1, self.A2)

    @classmethod
    def random(cls, rng: np.random.Generator, p: float | None = None, m: float | None = None, optimal: bool = False, L=None) -> "Lemma31Config":
        """Random configuration; ``optimal`` makes the bound attainable."""
        p = float(rng.choice([1.5, 2.0, 4.0])) if p is None else p
        m = float(rng.uniform(-1, 1)) if m is None else m
        L1, L2, L3 = rng.uniform(0.5, 2.0, size=3) if L is None else (float(v) for v in L)
        A1 = rng.normal(size=(3, 3))
        A2 = rng.normal(size=(3, 3))
        b1 = rng.normal(size=3)
        b2 = rng.normal(size=3)
        if optimal:
            A2[:, 1] = A1[:, 1]
            jump = (A2 - A1)[:, 2]
            b2 = b1 - L1 * A2[:, 0] - m * L1 * A2[:, 1] - 0.5 * L3 * jump
        return cls(p, L1, L2, L3, m, A1, b1, A2, b2)


def sheared_interpolant(cfg: Lemma31Config) -> VectorField3:
    """Linear interpolation between the traces along the slanted direction."""

    def value(x):
        x = np.asarray(x, dtype=float)
        s = x[..., 0:1] / cfg.L1
        base = x[..., 1] - cfg.m * x[..., 0]
        left = np.stack([np.zeros_like(base), base, x[..., 2]], axis=-1)
        right = np.stack([np.full_like(base, cfg.L1), base + cfg.m * cfg.L1, x[..., 2]], axis=-1)
        return (1 - s) * cfg.w1(left) + s * cfg.w2(right)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        s = x[..., 0] / cfg.L1
        base = x[..., 1] - cfg.m * x[..., 0]
        left = np.stack([np.zeros_like(base), base, x[..., 2]], axis=-1)
        right = np.stack([np.full_like(base, cfg.L1), base + cfg.m * cfg.L1, x[..., 2]], axis=-1)
        diff = (cfg.w2(right) - cfg.w1(left)) / cfg.L1
        # d(left)/dx and d(right)/dx: only the sheared coordinate moves
        J = np.array([[0.0, 0.0, 0.0], [-cfg.m, 1.0, 0.0], [0.0, 0.0, 1.0]])
        G = (1 - s)[..., None, None] * (cfg.A1 @ J) + s[..., None, None] * (cfg.A2 @ J)
        G = np.broadcast_to(G, x.shape[:-1] + (3, 3)).copy()
        G[..., :, 0] += diff
        return G

    return VectorField3(value, gradient, name="sheared interpolant")


def perturbed_interpolant(cfg: Lemma31Config, rng: np.random.Generator, amplitude: float = 1.0, modes: int = 3) -> VectorField3:
    """``(1-s) w1 + s w2 + s(1-s) psi`` with ``s = x1/L1`` and a random smooth ``psi``."""
    K = rng.normal(size=(modes, 3, 3)) * 2.0
    phase = rng.uniform(0, 2 * np.pi, size=(modes, 3))
    amp = rng.normal(size=(modes, 3)) * amplitude

    def psi(x):
        arg = np.einsum("mij,...j->...mi", K, x) + phase
        return np.sum(amp * np.sin(arg), axis=-2)

    def dpsi(x):
        arg = np.einsum("mij,...j->...mi", K, x) + phase
        return np.einsum("...mi,mij->...ij", amp * np.cos(arg), K)

    def value(x):
        x = np.asarray(x, dtype=float)
        s = x[..., 0:1] / cfg.L1
        return (1 - s) * cfg.w1(x) + s * cfg.w2(x) + s * (1 - s) * psi(x)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        s = x[..., 0] / cfg.L1
        sv = s[..., None, None]
        G = (1 - sv) * cfg.A1 + sv * cfg.A2 + (s * (1 - s))[..., None, None] * dpsi(x)
        G[..., :, 0] += (cfg.w2(x) - cfg.w1(x) + (1 - 2 * s)[..., None] * psi(x)) / cfg.L1
        return G

    return VectorField3(value, gradient, name="perturbed interpolant")


def lemma31_verify(v: VectorField3, cfg: Lemma31Config, quad: QuadratureSpec | None = None, trace_tol: float = 1e-8, order=(10, 10, 12)) -> dict:
    """Quadrature of ``int_E |d_d v|^p`` against the closed-form bound.

    Without ``quad`` a Gauss-Legendre tensor rule of the given ``order`` is
    used; it integrates the polynomial integrands of even ``p`` exactly.
    """
    rng = np.random.default_rng(0)
    face = rng.random((64, 3)) * np.array([0.0, cfg.L2, cfg.L3])
    left = cfg.to_physical(face)
    right = cfg.to_physical(face + np.array([cfg.L1, 0.0, 0.0]))
    err = max(float(np.max(np.abs(v(left) - cfg.w1(left)))), float(np.max(np.abs(v(right) - cfg.w2(right)))))
    if err > trace_tol:
        raise ValueError(f"field violates the affine traces (max deviation {err:.3g})")
    d = cfg.direction
    Q = ((0.0, cfg.L1), (0.0, cfg.L2), (0.0, cfg.L3))
    rules = quad.rules(Q) if quad is not None else [gauss_rule(lo, hi, n) for (lo, hi), n in zip(Q, order)]

    def density(y):
        gv = grad(v, cfg.to_physical(y))
        return np.linalg.norm(gv @ d, axis=-1) ** cfg.p

    lhs = float(tensor_sum(density, rules))
    rhs = cfg.rhs()
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else (math.inf if lhs > 0 else 1.0)}


def lemma31_minimize(cfg: Lemma31Config, n: int = 17, tol: float = 1e-13, max_sweeps: int = 100_000, seed: int = 0) -> dict:
    """Discrete minimisation of ``int_E |d_d v|^p`` over grid fields with the traces fixed.

    Grid values live on an ``n^3`` lattice in sheared coordinates.  The
    discrete energy couples neighbours along ``y1`` only; the exact
    minimiser of ``|v - a|^p + |c - v|^p`` over ``v`` is the midpoint, so
    Gauss-Seidel sweeps with midpoint updates are exact coordinate descent.
    Integrals in ``y2, y3`` use the trapezoid rule on the grid.
    """
    y1 = np.linspace(0, cfg.L1, n)
    y2 = np.linspace(0, cfg.L2, n)
    y3 = np.linspace(0, cfg.L3, n)
    Y = np.stack(np.meshgrid(y1, y2, y3, indexing="ij"), axis=-1)
    X = cfg.to_physical(Y)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=X.shape)
    v[0] = cfg.w1(X[0])
    v[-1] = cfg.w2(X[-1])
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        change = 0.0
        for i in range(1, n - 1):
            new = 0.5 * (v[i - 1] + v[i + 1])
            change = max(change, float(np.max(np.abs(new - v[i]))))
            v[i] = new
        if change < tol:
            break
    h1 = y1[1] - y1[0]
    w2 = np.full(n, y2[1] - y2[0])
    w2[[0, -1]] *= 0.5
    w3 = np.full(n, y3[1] - y3[0])
    w3[[0, -1]] *= 0.5
    dv = np.linalg.norm(np.diff(v, axis=0) / h1, axis=-1) ** cfg.p / (1 + cfg.m**2) ** (cfg.p / 2)
    lhs = float(np.einsum("ijk,j,k->", dv, w2, w3) * h1)
    rhs = cfg.rhs()
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else math.inf, "sweeps": sweeps}


# -- energies --------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyDensitySpec:
    """Soft density ``dist_p`` (``dist(F, SO(3))^p``) or ``stvk_like``
    (``|F^T F - I|^(p/2) + |det F - 1|^p``); the rigid density is the
    indicator of SO(3) up to ``tau``.  ``diagnostic_p`` sets the exponent of
    the always-reported integral of ``dist^p`` over the fibers."""

    soft: str = "dist_p"
    p: float = 2.0
    tau: float = 1e-8
    diagnostic_p: float = 4.0

    def __post_init__(self):
        if self.soft not in ("dist_p", "stvk_like"):
            raise ValueError(f"unknown soft density {self.soft!r}")

    def soft_density(self, F: np.ndarray) -> np.ndarray:
        if self.soft == "dist_p":
            return dist_SO3(F) ** self.p
        C = np.swapaxes(F, -1, -2) @ F - np.eye(3)
        return np.linalg.norm(C, axis=(-2, -1)) ** (self.p / 2) + np.abs(np.linalg.det(F) - 1.0) ** self.p


def energy(
    u: VectorField3,
    layout: FiberLayout,
    spec: EnergyDensitySpec,
    domain: Domain3,
    quad: QuadratureSpec = DEFAULT_QUAD,
    soft: bool = True,
) -> dict:
    """Two-phase energy: soft density off the fibers, SO(3) indicator on them.

    The rigid diagnostics integrate over the inner squares only; the soft
    part needs the full grid and can be skipped with ``soft=False``.
    """
    worst = [0.0]

    def rigid_density(x):
        d = dist_SO3(grad(u, x))
        if d.size:
            worst[0] = max(worst[0], float(np.max(d)))
        return d**spec.diagnostic_p

    diag = fiber_integral(rigid_density, layout, domain.bounds3, quad)
    soft_val = math.nan
    if soft:
        rules = quad.rules(domain.bounds3, layout.eps, layout_breaks(layout, domain.bounds3))

        def soft_density(x):
            rig = layout.is_rigid(x)
            out = np.zeros(x.shape[:-1])
            if not np.all(rig):
                out[~rig] = spec.soft_density(grad(u, x[~rig]))
            return out

        soft_val = float(tensor_sum(soft_density, rules, quad.chunk))
    feasible = worst[0] <= spec.tau
    return {
        "soft": soft_val,
        "rigid": 0.0 if feasible else math.inf,
        "feasible": bool(feasible),
        "max_rigid_dist": worst[0],
        "rigid_dist_p": float(diag),
    }


# -- regularised pathway ---------------------------------------------------------------


def v_field(u: VectorField3, prf: PiecewiseRotationField, L: float, n3: int = 8) -> Callable:
    """``V(x') = (x3-average of d1 u, d2 u | Sigma(x'))`` as a map of ``x'``."""
    z, wz = axis_rule(0.0, L, L / n3, ())

    def V(xp):
        xp = np.asarray(xp, dtype=float)[..., :2]
        acc = np.zeros(xp.shape[:-1] + (3, 2))
        for zz, ww in zip(z, wz):
            pts = np.concatenate([xp, np.full(xp.shape[:-1] + (1,), zz)], axis=-1)
            acc += ww * grad(u, pts)[..., :, :2]
        out = np.empty(xp.shape[:-1] + (3, 3))
        out[..., :, :2] = acc / L
        out[..., :, 2] = prf.sigma(xp)
        return out

    return V


def regularized_check(
    sequence: Sequence[tuple],
    p: float,
    xi_factors: Sequence = ((1, 0), (0, 1), (2, 0), (0, 2), (4, 0), (0, 4)),
    region=None,
    quad: QuadratureSpec = DEFAULT_QUAD,
    limit_gradient: Callable | None = None,
) -> dict:
    """Second-difference and improved-modulus diagnostics along a sequence.

    ``sequence`` holds ``(layout, u_eps, domain)`` triples.  Per scale it
    reports the largest ``||d_i d_j u_eps||_{L^p}`` over the box
    ``region x (0, L)``, the translation modulus rescaled by ``eps^-p`` and
    the distances of ``V_eps`` to SO(3) on the fibers and to the
    ``x3``-averaged limit gradient.
    """
    rows = []
    for layout, u, domain in sequence:
        eps = layout.eps
        U = region or domain.cross_section
        reach = max(max(abs(a), abs(b)) for a, b in xi_factors) * eps
        window = ((U[0][0] - 2 * reach - eps, U[0][1] + 2 * reach + eps), (U[1][0] - 2 * reach - eps, U[1][1] + 2 * reach + eps))
        prf = extract_rotations(u, layout, domain, quad, window=window)
        box = (U[0], U[1], (0.0, domain.L))
        sd = max(second_diff_norm(u, i, j, p, domain, quad, layout, box=box) for i in range(2) for j in range(i, 2))
        xi = [eps * np.asarray(f, dtype=float) for f in xi_factors]
        fk = fk_modulus(prf, xi, p, U, omega=domain.cross_section)
        rescaled = max(r.value / (eps**p * (r.xi_norm**p + eps**p)) for r in fk.rows)
        V = v_field(u, prf, domain.L)
        flat = ((U[0][0], U[0][1]), (U[1][0], U[1][1]))
        rules = quad.rules(flat, eps, layout_breaks(layout, flat))

        def rigid_dist(xp):
            return np.where(layout.is_rigid(xp), dist_SO3(V(xp)) ** p, 0.0)

        dist_rigid = float(tensor_sum(rigid_dist, rules, quad.chunk)) ** (1 / p)
        row = {"eps": eps, "second_diff": sd, "fk_rescaled": rescaled, "V_dist_rigid": dist_rigid}
        if limit_gradient is not None:
            z, wz = axis_rule(0.0, domain.L, domain.L / 8, ())

            def gap(xp):
                acc = 0.0
                for zz, ww in zip(z, wz):
                    pts = np.concatenate([xp, np.full(xp.shape[:-1] + (1,), zz)], axis=-1)
                    acc = acc + ww * limit_gradient(pts)
                return np.linalg.norm(V(xp) - acc / domain.L, axis=(-2, -1)) ** p

            row["V_dist_limit"] = float(tensor_sum(gap, rules, quad.chunk)) ** (1 / p)
        rows.append(row)
    growth = [rows[n + 1]["second_diff"] / rows[n]["second_diff"] if rows[n]["second_diff"] > 0 else 0.0 for n in range(len(rows) - 1)]
    return {"rows": rows, "second_diff_growth": growth}


def deviation_measure(V: Callable, gamma: float, region, quad: QuadratureSpec = DEFAULT_QUAD, layout: FiberLayout | None = None) -> float:
    """Measure of ``{x in Q : dist(V(x), SO(3)) > gamma}`` by the midpoint rule."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    eps = layout.eps if layout is not None else None
    rules = quad.rules(region, eps, layout_breaks(layout, region) if layout is not None else None)

    def indicator(x):
        return (dist_SO3(V(x)) > gamma).astype(float)

    return float(tensor_sum(indicator, rules, quad.chunk))
