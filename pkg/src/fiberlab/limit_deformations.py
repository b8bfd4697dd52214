"""Effective deformations ``u(x) = x3*Sigma(x') + d(x') = R(x')x + b(x')``.

Director form ``(Sigma, d)`` and rotation form ``(R, b)`` are related by a
lifting ``R e3 = Sigma``.  The gallery presets are written symbolically once
and compiled to vectorised numpy evaluators with exact first and second
cross-section derivatives.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import gaussian_filter

from .fields import VectorField3, grad
from .geometry import Domain3
from .so3 import project_SO3

ETA = 1e-2  # minimal distance of a lifted vector from the e3-axis

_x1, _x2 = sp.symbols("x1 x2", real=True)
_s = sp.symbols("s1 s2 s3", real=True)

PRESETS = ("paraboloid", "shear", "twist", "tyre", "hedgehog", "trophy", "rigid")

_DEFAULT_BOX = {
    "paraboloid": ((-1, 1), (-1, 1), 1.0),
    "shear": ((-1, 1), (-1, 1), 1.0),
    "tyre": ((-1, 1), (-1, 1), 1.0),
    "hedgehog": ((-1, 1), (-1, 1), 1.0),
    "twist": ((0, 4), (0, 1), 1.0),
    "trophy": ((-1, 1), (-1, 1), 4.0),
    "rigid": ((0, 1), (0, 1), 1.0),
}


def default_domain(name: str) -> Domain3:
    if name not in _DEFAULT_BOX:
        raise ValueError(f"unknown preset {name!r}")
    a, b, L = _DEFAULT_BOX[name]
    return Domain3.box(a, b, L)


# -- symbolic compilation -------------------------------------------------------


def _vectorize(exprs) -> Callable:
    """Compile scalar expressions in ``(x1, x2)`` to ``f(x') -> (..., n)``."""
    fns = [sp.lambdify((_x1, _x2), e, "numpy") for e in exprs]

    def f(xp):
        xp = np.asarray(xp, dtype=float)
        a, b = xp[..., 0], xp[..., 1]
        return np.stack([np.broadcast_to(np.asarray(fn(a, b), dtype=float), a.shape) for fn in fns], axis=-1)

    return f


def _compile_vector(exprs):
    """Value, gradient ``(..., 3, 2)`` and Hessian ``(..., 3, 2, 2)`` evaluators."""
    exprs = [sp.sympify(e) for e in exprs]
    val = _vectorize(exprs)
    g = _vectorize([sp.diff(e, v) for e in exprs for v in (_x1, _x2)])
    h = _vectorize([sp.diff(e, v, w) for e in exprs for v in (_x1, _x2) for w in (_x1, _x2)])

    def grad(xp):
        out = g(xp)
        return out.reshape(out.shape[:-1] + (3, 2))

    def hess(xp):
        out = h(xp)
        return out.reshape(out.shape[:-1] + (3, 2, 2))

    return val, grad, hess


def _symbolic_preset(name: str, params: tuple):
    x1, x2 = _x1, _x2
    p = dict(params)
    if name == "paraboloid":
        return (0, 0, 1), (x1, x2, -(x1**2) - x2**2)
    if name == "shear":
        g = sp.nsimplify(p["gamma"], rational=True)
        return (0, 0, 1), (x1, g * x1 + x2, 0)
    if name == "twist":
        t = x1 / sp.pi
        return (0, -sp.sin(t), sp.cos(t)), (x1, x2 * sp.cos(t), x2 * sp.sin(t))
    if name == "tyre":
        r = sp.nsimplify(p["r"])
        root = sp.sqrt(r**2 - x1**2)
        return (x1 / r, 0, root / r), (x1, x2 + sp.exp(x2), root)
    if name == "hedgehog":
        n = sp.sqrt(4 * (x1**2 + x2**2) + 1)
        return (2 * x1 / n, 2 * x2 / n, 1 / n), (x1, x2, -(x1**2) - x2**2)
    if name == "trophy":
        n = sp.sqrt(2) * sp.sqrt(x1**2 + x2**2 + 1)
        return ((-x1 - x2) / n, (x1 - x2) / n, sp.sqrt(2) / n), (x1, x2, 0)
    if name == "rigid":
        R0 = sp.Matrix(p["R0"])
        b0 = sp.Matrix(p["b0"])
        d = R0 * sp.Matrix([x1, x2, 0]) + b0
        return tuple(R0[:, 2]), tuple(d)
    raise ValueError(f"unknown preset {name!r}")


@lru_cache(maxsize=None)
def _compiled_preset(name: str, params: tuple):
    sig, d = _symbolic_preset(name, params)
    return _compile_vector(sig), _compile_vector(d)


# -- director form --------------------------------------------------------------


@dataclass
class DirectorForm:
    """``u(x) = x3*Sigma(x') + d(x')`` with cross-section derivatives.

    ``sigma_grad``/``d_grad`` return ``(..., 3, 2)`` arrays ``[i, j] = d_j f_i``,
    the Hessians ``(..., 3, 2, 2)``.
    """

    sigma: Callable
    d: Callable
    sigma_grad: Callable | None = None
    d_grad: Callable | None = None
    domain: Domain3 | None = None
    name: str = ""
    params: dict = field(default_factory=dict)
    sigma_hess: Callable | None = None
    d_hess: Callable | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[..., 2:3] * self.sigma(x[..., :2]) + self.d(x[..., :2])

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xp, x3 = x[..., :2], x[..., 2]
        G = np.empty(x.shape[:-1] + (3, 3))
        G[..., :, :2] = x3[..., None, None] * self.sigma_grad(xp) + self.d_grad(xp)
        G[..., :, 2] = self.sigma(xp)
        return G

    def second(self, x, i: int, j: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xp = x[..., :2]
        return x[..., 2:3] * self.sigma_hess(xp)[..., i, j] + self.d_hess(xp)[..., i, j]

    def deformation(self) -> VectorField3:
        grad = self.gradient if self.sigma_grad is not None and self.d_grad is not None else None
        second = self.second if self.sigma_hess is not None and self.d_hess is not None else None
        return VectorField3(self, grad, domain=self.domain, second=second, name=self.name or "director form")


def preset(name: str, domain: Domain3 | None = None, **params) -> DirectorForm:
    """Closed-form gallery deformation in director form.

    ``shear`` takes ``gamma`` (default 1), ``tyre`` takes ``r`` (default 3/2),
    ``rigid`` takes ``R0`` and ``b0``.
    """
    if name == "bending_limit":
        raise ValueError("the bending limit has an x3-dependent fiber direction; build it with sequence_builder.bending_limit")
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    domain = domain or default_domain(name)
    if name == "shear":
        params = {"gamma": float(params.get("gamma", 1.0))}
    elif name == "tyre":
        r = float(params.get("r", 1.5))
        reach = max(abs(domain.omega_min[0]), abs(domain.omega_max[0]))
        if not r > reach:
            raise ValueError(f"tyre needs r > max|x1| = {reach} on omega, got r={r}")
        params = {"r": r}
    elif name == "rigid":
        R0 = np.asarray(params.get("R0", np.eye(3)), dtype=float)
        b0 = np.asarray(params.get("b0", np.zeros(3)), dtype=float)
        if R0.shape != (3, 3) or np.linalg.norm(R0.T @ R0 - np.eye(3)) > 1e-12 or np.linalg.det(R0) <= 0:
            raise ValueError("rigid preset needs R0 in SO(3)")
        params = {"R0": tuple(map(tuple, R0.tolist())), "b0": tuple(b0.tolist())}
    elif params:
        raise ValueError(f"preset {name!r} takes no parameters, got {sorted(params)}")
    key = tuple(sorted(params.items()))
    (sv, sg, sh), (dv, dg, dh) = _compiled_preset(name, key)
    return DirectorForm(sv, dv, sg, dg, domain, name, dict(params), sh, dh)


# -- lifts ------------------------------------------------------------------------


def _check_pole(Sigma, eta: float):
    rho2 = Sigma[..., 0] ** 2 + Sigma[..., 1] ** 2
    if np.any(rho2 < eta * eta):
        raise ValueError(f"director too close to the e3-axis for a lift (Sigma1^2+Sigma2^2 < {eta * eta:g})")
    return np.sqrt(rho2)


def _assemble(e2, Sigma):
    e1 = np.cross(e2, Sigma)
    return np.stack([e1, e2, Sigma], axis=-1)


def lift_R(Sigma, eta: float = ETA) -> np.ndarray:
    """Rotation with third column ``Sigma``, second column horizontal."""
    S = np.asarray(Sigma, dtype=float)
    rho = _check_pole(S, eta)
    e2 = np.stack([-S[..., 1], S[..., 0], np.zeros_like(rho)], axis=-1) / rho[..., None]
    return _assemble(e2, S)


def lift_S(Sigma, eta: float = ETA) -> np.ndarray:
    """Rotation with third column ``Sigma``, second column in the meridian plane."""
    S = np.asarray(Sigma, dtype=float)
    rho = _check_pole(S, eta)
    e2 = np.stack([-S[..., 0] * S[..., 2], -S[..., 1] * S[..., 2], 1 - S[..., 2] ** 2], axis=-1) / rho[..., None]
    return _assemble(e2, S)


LIFTS = {"R": lift_R, "S": lift_S}


@lru_cache(maxsize=None)
def _lift_jacobian(kind: str) -> Callable:
    """Derivative of the lift formula with respect to ``Sigma``: ``(..., 3, 3, 3)``."""
    s1, s2, s3 = _s
    rho = sp.sqrt(s1**2 + s2**2)
    if kind == "R":
        e2 = sp.Matrix([-s2, s1, 0]) / rho
    else:
        e2 = sp.Matrix([-s1 * s3, -s2 * s3, 1 - s3**2]) / rho
    e3 = sp.Matrix([s1, s2, s3])
    e1 = e2.cross(e3)
    M = sp.Matrix.hstack(e1, e2, e3)
    entries = [sp.diff(M[i, j], v) for i in range(3) for j in range(3) for v in _s]
    fns = [sp.lambdify(_s, e, "numpy") for e in entries]

    def jac(S):
        S = np.asarray(S, dtype=float)
        a, b, c = S[..., 0], S[..., 1], S[..., 2]
        out = np.stack([np.broadcast_to(np.asarray(fn(a, b, c), dtype=float), a.shape) for fn in fns], axis=-1)
        return out.reshape(a.shape + (3, 3, 3))

    return jac


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def frame_with_third_row(n) -> np.ndarray:
    """A rotation ``Q`` whose third row is the unit vector ``n`` (so ``Q n = e3``)."""
    n = _unit(n)
    if np.allclose(n, [0, 0, 1]):
        return np.eye(3)
    helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    a = _unit(np.cross(helper, n))
    b = np.cross(n, a)
    return np.stack([a, b, n])


def candidate_pre_rotations() -> list[np.ndarray]:
    """26 rotations sending axis and diagonal directions to ``e3``; identity first."""
    dirs = [v for v in itertools.product((-1, 0, 1), repeat=3) if any(v)]
    dirs.sort(key=lambda v: (v != (0, 0, 1), v))
    return [frame_with_third_row(v) for v in dirs]


def select_pre_rotation(sigma_samples: np.ndarray, eta: float = ETA) -> np.ndarray:
    """Candidate maximising ``min (Q Sigma)_1^2 + (Q Sigma)_2^2`` over the samples."""
    S = np.asarray(sigma_samples, dtype=float).reshape(-1, 3)
    best, best_val = None, -1.0
    for Q in candidate_pre_rotations():
        v = S @ Q.T
        m = float(np.min(v[:, 0] ** 2 + v[:, 1] ** 2))
        if m > best_val + 1e-15:
            best, best_val = Q, m
    if best_val < eta * eta:
        raise ValueError(f"no pre-rotation keeps the director away from the poles (best clearance {best_val:.3g})")
    return best


# -- rotation form --------------------------------------------------------------


@dataclass
class RotationForm:
    """``u(x) = R(x')x + b(x')`` with ``dR(x')[..., j] = d_j R`` and ``db[..., j] = d_j b``.

    ``dR`` returns ``(..., 2, 3, 3)`` and ``db`` returns ``(..., 2, 3)``.
    """

    R: Callable
    b: Callable
    dR: Callable | None = None
    db: Callable | None = None
    domain: Domain3 | None = None
    name: str = ""

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...ij,...j->...i", self.R(x[..., :2]), x) + self.b(x[..., :2])

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xp = x[..., :2]
        R = self.R(xp)
        dR = self.dR(xp)
        db = self.db(xp)
        G = R.copy()
        for j in range(2):
            G[..., :, j] += np.einsum("...ik,...k->...i", dR[..., j, :, :], x) + db[..., j, :]
        return G

    def deformation(self) -> VectorField3:
        grad = self.gradient if self.dR is not None and self.db is not None else None
        return VectorField3(self, grad, domain=self.domain, name=self.name or "rotation form")

    @classmethod
    def constant(cls, R0, b0=(0.0, 0.0, 0.0), domain: Domain3 | None = None) -> "RotationForm":
        R0 = np.asarray(R0, dtype=float)
        b0 = np.asarray(b0, dtype=float)

        def R(xp):
            return np.broadcast_to(R0, np.shape(xp)[:-1] + (3, 3)).copy()

        def b(xp):
            return np.broadcast_to(b0, np.shape(xp)[:-1] + (3,)).copy()

        def dR(xp):
            return np.zeros(np.shape(xp)[:-1] + (2, 3, 3))

        def db(xp):
            return np.zeros(np.shape(xp)[:-1] + (2, 3))

        return cls(R, b, dR, db, domain, "constant rotation")

    @classmethod
    def sampled(cls, axes, R_grid, b_grid, domain: Domain3 | None = None, smoothing: float = 0.0) -> "RotationForm":
        """Rotation form from grid samples on ``omega``.

        Entries are optionally Gaussian-smoothed (``smoothing`` in grid units),
        interpolated bilinearly and projected back to SO(3).  Derivatives come
        from central differences at half the grid spacing.
        """
        ax = [np.asarray(a, dtype=float) for a in axes]
        Rg = np.asarray(R_grid, dtype=float)
        bg = np.asarray(b_grid, dtype=float)
        if smoothing > 0:
            Rg = gaussian_filter(Rg, sigma=(smoothing, smoothing, 0, 0), mode="nearest")
            bg = gaussian_filter(bg, sigma=(smoothing, smoothing, 0), mode="nearest")
        iR = RegularGridInterpolator(ax, Rg.reshape(len(ax[0]), len(ax[1]), 9))
        ib = RegularGridInterpolator(ax, bg)
        lo = np.array([ax[0][0], ax[1][0]])
        hi = np.array([ax[0][-1], ax[1][-1]])
        h = 0.5 * min(ax[0][1] - ax[0][0], ax[1][1] - ax[1][0])

        def R(xp):
            xp = np.clip(np.asarray(xp, dtype=float), lo, hi)
            M = iR(xp.reshape(-1, 2)).reshape(xp.shape[:-1] + (3, 3))
            return project_SO3(M)

        def b(xp):
            xp = np.clip(np.asarray(xp, dtype=float), lo, hi)
            return ib(xp.reshape(-1, 2)).reshape(xp.shape[:-1] + (3,))

        def _diff(f, xp, shape):
            xp = np.asarray(xp, dtype=float)
            out = np.empty(xp.shape[:-1] + (2,) + shape)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                out[..., j, :] = (f(xp + e) - f(xp - e)) / (2 * h)
            return out

        return cls(R, b, lambda xp: _diff(R, xp, (3, 3)), lambda xp: _diff(b, xp, (3,)), domain, "sampled rotation form")


def _sigma_samples(df: DirectorForm, n: int = 33) -> np.ndarray:
    (a1, b1), (a2, b2) = df.domain.cross_section
    g = np.stack(np.meshgrid(np.linspace(a1, b1, n), np.linspace(a2, b2, n), indexing="ij"), axis=-1)
    return df.sigma(g.reshape(-1, 2))


def to_rotation_form(df: DirectorForm, lift: str = "R", pre_rotation=None, eta: float = ETA) -> RotationForm:
    """Lift ``Sigma`` to ``R = Q^T lift(Q Sigma)`` and set ``b = d - x1 R e1 - x2 R e2``.

    Without ``pre_rotation`` the candidate ``Q`` is chosen from samples of
    ``Sigma`` on ``omega`` so the lifted director stays clear of the poles.
    """
    if lift not in LIFTS:
        raise ValueError(f"lift must be 'R' or 'S', got {lift!r}")
    if df.sigma_grad is None or df.d_grad is None:
        raise ValueError("director form needs exact cross-section gradients")
    if pre_rotation is None:
        Q = select_pre_rotation(_sigma_samples(df), eta)
    else:
        Q = np.asarray(pre_rotation, dtype=float)
    lifter = LIFTS[lift]
    jac = _lift_jacobian(lift)

    def R(xp):
        S = df.sigma(xp) @ Q.T
        return Q.T @ lifter(S, eta)

    def dR(xp):
        S = df.sigma(xp) @ Q.T
        dS = np.einsum("ab,...bj->...aj", Q, df.sigma_grad(xp))  # (..., 3, 2)
        J = jac(S)  # (..., 3, 3, 3): d M_ik / d s_l
        dM = np.einsum("...ikl,...lj->...jik", J, dS)
        return Q.T @ dM

    def b(xp):
        xp = np.asarray(xp, dtype=float)
        Rm = R(xp)
        return df.d(xp) - xp[..., 0:1] * Rm[..., :, 0] - xp[..., 1:2] * Rm[..., :, 1]

    def db(xp):
        xp = np.asarray(xp, dtype=float)
        Rm = R(xp)
        dRm = dR(xp)
        dd = df.d_grad(xp)
        out = np.empty(xp.shape[:-1] + (2, 3))
        for j in range(2):
            out[..., j, :] = (
                dd[..., :, j]
                - Rm[..., :, j]
                - xp[..., 0:1] * dRm[..., j, :, 0]
                - xp[..., 1:2] * dRm[..., j, :, 1]
            )
        return out

    rf = RotationForm(R, b, dR, db, df.domain, f"{df.name} ({lift}-lift)")
    rf.pre_rotation = Q
    return rf


def to_director_form(rf: RotationForm) -> DirectorForm:
    """``Sigma = R e3`` and ``d = b + x1 R e1 + x2 R e2``."""

    def sigma(xp):
        return rf.R(xp)[..., :, 2]

    def d(xp):
        xp = np.asarray(xp, dtype=float)
        Rm = rf.R(xp)
        return rf.b(xp) + xp[..., 0:1] * Rm[..., :, 0] + xp[..., 1:2] * Rm[..., :, 1]

    sigma_grad = d_grad = None
    if rf.dR is not None and rf.db is not None:
        def sigma_grad(xp):
            return np.swapaxes(rf.dR(xp)[..., :, :, 2], -1, -2)

        def d_grad(xp):
            xp = np.asarray(xp, dtype=float)
            Rm, dRm, dbm = rf.R(xp), rf.dR(xp), rf.db(xp)
            out = np.empty(xp.shape[:-1] + (3, 2))
            for j in range(2):
                out[..., :, j] = dbm[..., j, :] + Rm[..., :, j] + xp[..., 0:1] * dRm[..., j, :, 0] + xp[..., 1:2] * dRm[..., j, :, 1]
            return out

    return DirectorForm(sigma, d, sigma_grad, d_grad, rf.domain, rf.name)


# -- membership tests ------------------------------------------------------------


def _sample_grid(domain: Domain3, n: int, levels: int):
    (a1, b1), (a2, b2) = domain.cross_section
    x1 = np.linspace(a1, b1, n)
    x2 = np.linspace(a2, b2, n)
    x3 = np.linspace(0.0, domain.L, levels)
    return x1, x2, x3


def membership_A0(u: VectorField3, tol: float = 1e-9, domain: Domain3 | None = None, n: int = 9, levels: int = 5) -> dict:
    """Fiber direction ``d3 u`` must be an ``x3``-independent unit vector.

    Reports the largest change of ``d3 u`` between sampled heights and the
    largest deviation of ``|d3 u|`` from 1.
    """
    domain = domain or u.domain
    x1, x2, x3 = _sample_grid(domain, n, levels)
    X = np.stack(np.meshgrid(x1, x2, x3, indexing="ij"), axis=-1)
    fib = grad(u, X)[..., :, 2]  # (n, n, levels, 3)
    spread = 0.0
    for s, t in itertools.combinations(range(levels), 2):
        spread = max(spread, float(np.max(np.linalg.norm(fib[:, :, s] - fib[:, :, t], axis=-1))))
    unit = float(np.max(np.abs(np.linalg.norm(fib, axis=-1) - 1.0)))
    return {"pass": spread <= tol and unit <= tol, "x3_dependence": spread, "unit_defect": unit}


def membership_B0(u: VectorField3, tol: float = 1e-9, domain: Domain3 | None = None, n: int = 7, step: float | None = None) -> dict:
    """Layered class ``u(x) = R(x1)x + b(x1)``.

    Increments of ``u`` along ``e2`` and ``e3`` must not depend on ``(x2, x3)``
    for fixed ``x1`` (affinity), and the two coefficient columns must be
    orthonormal so they extend to a rotation.
    """
    domain = domain or u.domain
    (a1, b1), (a2, b2) = domain.cross_section
    L = domain.L
    t = step or 0.25 * min(b2 - a2, L)
    x1 = np.linspace(a1, b1, n)
    x2 = np.linspace(a2, b2 - t, n)
    x3 = np.linspace(0.0, L - t, n)
    X = np.stack(np.meshgrid(x1, x2, x3, indexing="ij"), axis=-1)
    base = u(X)
    c2 = (u(X + np.array([0.0, t, 0.0])) - base) / t
    c3 = (u(X + np.array([0.0, 0.0, t])) - base) / t
    aff2 = float(np.max(np.linalg.norm(c2 - c2[:, :1, :1], axis=-1)))
    aff3 = float(np.max(np.linalg.norm(c3 - c3[:, :1, :1], axis=-1)))
    frame = np.stack([c2, c3], axis=-1)
    gram = np.swapaxes(frame, -1, -2) @ frame
    frame_defect = float(np.max(np.linalg.norm(gram - np.eye(2), axis=(-2, -1))))
    return {
        "pass": max(aff2, aff3, frame_defect) <= tol,
        "affine_x2": aff2,
        "affine_x3": aff3,
        "frame_defect": frame_defect,
    }


def incompressibility(df: DirectorForm, n: int = 41, levels: int = 5) -> dict:
    """Largest ``|det grad u - 1|`` and ``|d1 Sigma x d2 Sigma|`` over a node grid."""
    x1, x2, x3 = _sample_grid(df.domain, n, levels)
    X = np.stack(np.meshgrid(x1, x2, x3, indexing="ij"), axis=-1)
    det = np.linalg.det(df.gradient(X))
    G = df.sigma_grad(X[..., 0, :2])
    par = np.linalg.norm(np.cross(G[..., :, 0], G[..., :, 1]), axis=-1)
    return {"det_residual": float(np.max(np.abs(det - 1.0))), "parallel_residual": float(np.max(par))}


def director_unit_defect(df: DirectorForm, n: int = 33) -> float:
    return float(np.max(np.abs(np.linalg.norm(_sigma_samples(df, n), axis=-1) - 1.0)))


def round_trip_residual(df: DirectorForm, rf: RotationForm, n: int = 17, levels: int = 3) -> float:
    x1, x2, x3 = _sample_grid(df.domain, n, levels)
    X = np.stack(np.meshgrid(x1, x2, x3, indexing="ij"), axis=-1)
    return float(np.max(np.linalg.norm(rf(X) - df(X), axis=-1)))

