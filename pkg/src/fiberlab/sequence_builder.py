"""Explicit deformation sequences at scale ``eps``.

* ``build``: exact members ``u_eps(x) = R(y)x + b(y)`` with ``y = phi_eps(x') + a``
  (clamped to ``omega``), rigid on every fiber because ``y`` is constant there.
* ``select_translation``: pick a shift ``a`` with small gradient norm.
* ``bending_counterexample``: uniformly bent stiff layers whose limit has an
  ``x3``-dependent fiber direction.
* ``perturb_beta``: add ``eps^(beta/p) * psi`` to leave the exact constraint by a
  controlled amount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from .approx_identity import ApproxIdentity, phi_eps
from .fields import DEFAULT_QUAD, QuadratureSpec, VectorField3, layout_breaks, lp_norm
from .geometry import Domain3, FiberLayout
from .limit_deformations import RotationForm


class ApproxDeformation(VectorField3):
    """``u_eps(x) = R(y(x'))x + b(y(x'))`` with ``y = clamp(phi_eps(x') + a)``.

    Evaluation and gradient are exact; the gradient uses the chain rule on
    each affine piece of ``phi_eps`` (``y`` depends on ``x_j`` through
    ``y_j`` only).
    """

    def __init__(self, rf: RotationForm, layout: FiberLayout, ident: ApproxIdentity, a, domain: Domain3):
        a = np.asarray(a, dtype=float)
        if not np.linalg.norm(a) < ident.epsilon:
            raise ValueError(f"translation |a|={np.linalg.norm(a):.3g} must be below epsilon={ident.epsilon:.3g}")
        if rf.dR is None or rf.db is None:
            raise ValueError("rotation form needs cross-section derivatives")
        self.rf = rf
        self.layout = layout
        self.ident = ident
        self.a = a
        super().__init__(self._evaluate, self._gradient, domain=domain, name=f"u_eps[{rf.name}, eps={layout.epsilon}]")

    def point(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Evaluation point ``y`` and a mask of coordinates left untouched by clamping."""
        y = phi_eps(np.asarray(x, dtype=float)[..., :2], self.ident) + self.a
        return self.domain.clamp_xy(y)

    def _evaluate(self, x):
        x = np.asarray(x, dtype=float)
        y, _ = self.point(x)
        return np.einsum("...ij,...j->...i", self.rf.R(y), x) + self.rf.b(y)

    def _gradient(self, x):
        x = np.asarray(x, dtype=float)
        y, free = self.point(x)
        slopes = self.ident.slopes(x) * free
        G = self.rf.R(y).copy()
        dR = self.rf.dR(y)
        db = self.rf.db(y)
        for j in range(2):
            G[..., :, j] += slopes[..., j : j + 1] * (np.einsum("...ik,...k->...i", dR[..., j, :, :], x) + db[..., j, :])
        return G

    def fiber_points(self, cells) -> np.ndarray:
        """The collapsed evaluation point of each cell's fiber."""
        y = self.ident.collapsed_point(cells) + self.a
        return self.domain.clamp_xy(y)[0]

    def fiber_rotations(self, cells) -> np.ndarray:
        return self.rf.R(self.fiber_points(cells))


def build(rf: RotationForm, layout: FiberLayout, ident: ApproxIdentity | None = None, a=(0.0, 0.0), domain: Domain3 | None = None) -> ApproxDeformation:
    domain = domain or rf.domain
    if domain is None:
        raise ValueError("build needs a domain")
    ident = ident or ApproxIdentity.for_layout(layout, domain)
    if not math.isclose(ident.epsilon, layout.eps, rel_tol=1e-15):
        raise ValueError("identity approximation and layout use different epsilon")
    return ApproxDeformation(rf, layout, ident, a, domain)


def sweep_rng(seed: int, epsilon) -> np.random.Generator:
    """Generator keyed by ``(seed, eps)`` so every sweep point is reproducible on its own."""
    eps = Fraction(epsilon).limit_denominator(1 << 40) if not isinstance(epsilon, Fraction) else epsilon
    return np.random.default_rng([int(seed), eps.numerator, eps.denominator])


class TranslationChoice(NamedTuple):
    a: np.ndarray
    norm: float
    mean_norm: float
    norms: np.ndarray


SELECTION_QUAD = QuadratureSpec(panels_per_eps=4, n3_per_unit=2)


def select_translation(
    rf: RotationForm,
    layout: FiberLayout,
    ident: ApproxIdentity | None = None,
    p: float = 4.0,
    M: int = 32,
    seed: int = 0,
    domain: Domain3 | None = None,
    quad: QuadratureSpec = SELECTION_QUAD,
) -> TranslationChoice:
    """Among ``M`` uniform draws from the open disk ``B(0, eps)``, the shift
    minimising ``||grad u_eps^a||_{L^p}``."""
    if M < 1:
        raise ValueError("need at least one translation sample")
    domain = domain or rf.domain
    ident = ident or ApproxIdentity.for_layout(layout, domain)
    rng = sweep_rng(seed, layout.epsilon)
    eps = layout.eps
    # uniform in the disk; the radius is kept strictly below eps
    r = eps * np.sqrt(rng.random(M)) * (1 - 1e-12)
    t = 2 * np.pi * rng.random(M)
    shifts = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    norms = np.empty(M)
    for n, a in enumerate(shifts):
        u = build(rf, layout, ident, a, domain)
        norms[n] = lp_norm(u.gradient, p, domain, layout=layout, quad=quad)
    best = int(np.argmin(norms))
    return TranslationChoice(shifts[best], float(norms[best]), float(np.mean(norms)), norms)


# -- bending of stiff layers -------------------------------------------------------


@dataclass(frozen=True)
class BendingSequence:
    """Stiff layers ``eps*(i + [alpha, 1-alpha)) x R^2`` bent along a circular arc.

    The arc ``gamma(t) = rho*(1 - cos(t/rho), 0, sin(t/rho))`` has unit
    tangent ``gamma'`` and unit normal ``nu = (cos, 0, -sin)(t/rho)``; the
    frame ``(nu, e2, gamma')`` is a rotation.
    """

    rho: float
    epsilon: float
    alpha: float = 0.25
    L: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "epsilon", float(self.epsilon))
        if not self.rho > self.L / math.pi:
            raise ValueError(f"bending radius must exceed L/pi = {self.L / math.pi:.4g}, got {self.rho}")
        if not 0 < self.epsilon < 1:
            raise ValueError("bending sequence needs 0 < eps < 1")
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")

    def gamma(self, t):
        th = np.asarray(t, dtype=float) / self.rho
        return self.rho * np.stack([1 - np.cos(th), np.zeros_like(th), np.sin(th)], axis=-1)

    def tangent(self, t):
        th = np.asarray(t, dtype=float) / self.rho
        return np.stack([np.sin(th), np.zeros_like(th), np.cos(th)], axis=-1)

    def normal(self, t):
        th = np.asarray(t, dtype=float) / self.rho
        return np.stack([np.cos(th), np.zeros_like(th), -np.sin(th)], axis=-1)

    def anchor(self, i):
        """Centre line ``x1 = eps*(i + 1/2)`` of layer ``i``, where the frame is exact."""
        return self.epsilon * (np.asarray(i, dtype=float) + 0.5)

    def layer_map(self, i, x):
        """Deformation of layer ``i``: ``c e1 + x2 e2 + gamma(x3) + (x1 - c) nu(x3)`` with ``c`` its anchor."""
        x = np.asarray(x, dtype=float)
        c = self.anchor(i)
        off = x[..., 0] - c
        out = self.gamma(x[..., 2]) + off[..., None] * self.normal(x[..., 2])
        out[..., 0] += c
        out[..., 1] += x[..., 1]
        return out

    def layer_gradient(self, i, x):
        x = np.asarray(x, dtype=float)
        s = (x[..., 0] - self.anchor(i)) / self.rho
        G = np.zeros(x.shape[:-1] + (3, 3))
        G[..., :, 0] = self.normal(x[..., 2])
        G[..., 1, 1] = 1.0
        G[..., :, 2] = (1 - s)[..., None] * self.tangent(x[..., 2])
        return G

    def _locate(self, x):
        t = np.asarray(x, dtype=float)[..., 0] / self.epsilon
        j = np.floor(t + self.alpha)
        r = t - j
        on_layer = r >= self.alpha
        lam = (r + self.alpha) / (2 * self.alpha)
        return j, on_layer, lam

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        j, on_layer, lam = self._locate(x)
        e, a = self.epsilon, self.alpha
        lower = x.copy()
        lower[..., 0] = e * (j - a)
        upper = x.copy()
        upper[..., 0] = e * (j + a)
        band = (1 - lam)[..., None] * self.layer_map(j - 1, lower) + lam[..., None] * self.layer_map(j, upper)
        return np.where(on_layer[..., None], self.layer_map(j, x), band)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        j, on_layer, lam = self._locate(x)
        e, a = self.epsilon, self.alpha
        nu = self.normal(x[..., 2])
        tan = self.tangent(x[..., 2])
        G = np.zeros(x.shape[:-1] + (3, 3))
        e1 = np.array([1.0, 0.0, 0.0])
        G[..., :, 0] = (e1 - (1 - 2 * a) * nu) / (2 * a)
        G[..., 1, 1] = 1.0
        # the band ends sit eps*(1/2-a) beyond and before the neighbouring anchors
        s_lo = e * (0.5 - a) / self.rho
        s_hi = -s_lo
        G[..., :, 2] = ((1 - lam) * (1 - s_lo) + lam * (1 - s_hi))[..., None] * tan
        return np.where(on_layer[..., None, None], self.layer_gradient(j, x), G)

    def on_layers(self, x) -> np.ndarray:
        return self._locate(x)[1]

    def limit(self, x):
        x = np.asarray(x, dtype=float)
        out = self.gamma(x[..., 2])
        out[..., 0] += x[..., 0]
        out[..., 1] += x[..., 1]
        return out

    def limit_gradient(self, x):
        x = np.asarray(x, dtype=float)
        G = np.zeros(x.shape[:-1] + (3, 3))
        G[..., 0, 0] = 1.0
        G[..., 1, 1] = 1.0
        G[..., :, 2] = self.tangent(x[..., 2])
        return G


def bending_limit(rho: float = 2.0, domain: Domain3 | None = None) -> VectorField3:
    """``u(x) = x1 e1 + x2 e2 + gamma(x3)``: the common limit of the bending sequences."""
    domain = domain or Domain3.box((0, 1), (0, 1), 1.0)
    bs = BendingSequence(rho, 0.5, L=domain.L)
    return VectorField3(bs.limit, bs.limit_gradient, domain=domain, name=f"bending limit (rho={rho})")


def bending_counterexample(bs: BendingSequence, domain: Domain3) -> tuple[VectorField3, VectorField3]:
    """The bent-layer field ``u_eps`` and its limit ``u``."""
    if not math.isclose(bs.L, domain.L):
        raise ValueError("bending sequence and domain must share the height L")
    u_eps = VectorField3(bs, bs.gradient, domain=domain, name=f"bent layers (eps={bs.epsilon:g}, rho={bs.rho:g})")
    u = VectorField3(bs.limit, bs.limit_gradient, domain=domain, name=f"bending limit (rho={bs.rho:g})")
    return u_eps, u


# -- approximate inclusion ---------------------------------------------------------


def default_bump(domain: Domain3) -> tuple[Callable, Callable]:
    """``psi(x) = (0, 0, (w/pi) sin(pi x1 / w))`` with ``w`` the width of omega; ``|grad psi| <= 1``."""
    w = float(domain.widths[0])

    def psi(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., 2] = (w / math.pi) * np.sin(math.pi * x[..., 0] / w)
        return out

    def dpsi(x):
        x = np.asarray(x, dtype=float)
        G = np.zeros(x.shape[:-1] + (3, 3))
        G[..., 2, 0] = np.cos(math.pi * x[..., 0] / w)
        return G

    return psi, dpsi


def perturb_beta(u: VectorField3, beta: float, p: float, epsilon, psi: tuple[Callable, Callable] | None = None) -> VectorField3:
    """``u + eps^(beta/p) * psi``; on the fibers ``dist(grad, SO(3)) <= eps^(beta/p)``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if u.gradient is None:
        raise ValueError("perturbation needs an exact gradient of the base field")
    psi, dpsi = psi or default_bump(u.domain)
    scale = float(epsilon) ** (beta / p)

    def value(x):
        return u(x) + scale * psi(x)

    def gradient(x):
        return u.gradient(x) + scale * dpsi(x)

    field = VectorField3(value, gradient, domain=u.domain, name=f"{u.name} + eps^{beta / p:g} psi")
    field.base = u
    field.scale = scale
    return field


def convergence_error(u_eps: VectorField3, u: Callable, p: float, layout: FiberLayout, domain: Domain3, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``||u_eps - u||_{L^p(Omega)}`` on the lattice-aligned rule."""
    return lp_norm(lambda x: u_eps(x) - u(x), p, domain, layout=layout, quad=quad, breaks=layout_breaks(layout, domain.bounds3))
