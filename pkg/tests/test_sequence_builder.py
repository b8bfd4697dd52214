from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberlab.approx_identity import ApproxIdentity
from fiberlab.fields import QuadratureSpec, VectorField3, grad
from fiberlab.geometry import Domain3, FiberLayout
from fiberlab.limit_deformations import RotationForm, membership_A0, preset, to_rotation_form
from fiberlab.reports import fit_rate
from fiberlab.rigidity_analysis import EnergyDensitySpec, energy
from fiberlab.sequence_builder import (
    BendingSequence,
    bending_counterexample,
    bending_limit,
    build,
    convergence_error,
    perturb_beta,
    select_translation,
    sweep_rng,
)
from fiberlab.so3 import axis_rotation, dist_SO3

UNIT = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)
R0 = axis_rotation((1.0, -2.0, 0.5), 0.8)


def _shear_rf():
    return to_rotation_form(preset("shear", gamma=1.0))


def _fiber_samples(layout, domain, n, rng):
    cells = layout.interior_cells(domain)
    pick = cells[rng.integers(len(cells), size=n)]
    lo, hi = layout.square_bounds(pick)
    xp = lo + (hi - lo) * rng.uniform(1e-9, 1 - 1e-9, size=(n, 2))
    return np.c_[xp, rng.uniform(0, domain.L, n)], pick


def test_constant_rotation_form_stays_rigid():
    rf = RotationForm.constant(R0, (0.3, 0.0, -1.0), UNIT)
    u = build(rf, FiberLayout("1/8"))
    x = np.random.default_rng(0).random((500, 3))
    assert dist_SO3(u.gradient(x)).max() < 1e-14
    np.testing.assert_allclose(u(x), x @ R0.T + [0.3, 0.0, -1.0], atol=1e-14)


def test_shear_fiber_gradient_is_collapsed_rotation():
    rf = _shear_rf()
    layout = FiberLayout("1/8")
    u = build(rf, layout)
    rng = np.random.default_rng(1)
    x, cells = _fiber_samples(layout, rf.domain, 400, rng)
    G = u.gradient(x)
    np.testing.assert_array_equal(G, u.fiber_rotations(cells))
    assert dist_SO3(G).max() < 1e-13


@pytest.mark.parametrize("name", ["twist", "paraboloid", "hedgehog"])
def test_fibers_are_rotations(name):
    rf = to_rotation_form(preset(name))
    layout = FiberLayout("1/16")
    u = build(rf, layout)
    x, _ = _fiber_samples(layout, rf.domain, 2000, np.random.default_rng(2))
    assert dist_SO3(u.gradient(x)).max() <= 1e-10


def test_gradient_matches_finite_differences_off_kinks():
    rf = to_rotation_form(preset("twist"))
    layout = FiberLayout("1/8")
    u = build(rf, layout)
    rng = np.random.default_rng(4)
    x = rng.uniform([0.2, 0.1, 0.1], [3.8, 0.9, 0.9], size=(300, 3))
    # keep points away from the kink lines of phi_eps
    r = (x[:, :2] / layout.eps + layout.alpha) % 1.0
    keep = np.all((np.abs(r - 2 * layout.alpha) > 0.02) & (r > 0.02) & (r < 0.98), axis=1)
    x = x[keep]
    fd = grad(VectorField3(u, domain=rf.domain), x, h=1e-7)
    np.testing.assert_allclose(u.gradient(x), fd, atol=1e-6)


def test_translation_bound():
    with pytest.raises(ValueError):
        build(_shear_rf(), FiberLayout("1/8"), a=(0.125, 0.0))


def test_sup_error_halves_for_shear():
    rf = _shear_rf()
    u = preset("shear", gamma=1.0)
    rng = np.random.default_rng(5)
    x = rng.uniform([-1, -1, 0], [1, 1, 1], size=(20000, 3))
    rows = []
    for n in (8, 16, 32, 64):
        ue = build(rf, FiberLayout(f"1/{n}"))
        rows.append((1 / n, float(np.max(np.linalg.norm(ue(x) - u(x), axis=-1)))))
    assert fit_rate(rows) == pytest.approx(1.0, abs=0.1)


def test_convergence_error_decreases():
    rf = to_rotation_form(preset("paraboloid"))
    u = preset("paraboloid")
    errs = [convergence_error(build(rf, FiberLayout(f"1/{n}")), u, 4, FiberLayout(f"1/{n}"), rf.domain) for n in (8, 16, 32)]
    assert errs[0] > errs[1] > errs[2]


def test_select_translation_constant_form():
    rf = RotationForm.constant(R0, (0.0, 0.0, 0.0), UNIT)
    choice = select_translation(rf, FiberLayout("1/8"), M=4, seed=3)
    assert choice.norm == pytest.approx(math.sqrt(3) * UNIT.volume ** 0.25, rel=1e-12)
    assert np.linalg.norm(choice.a) < 0.125


def test_select_translation_min_below_mean_and_bounded():
    rf = _shear_rf()
    norms = []
    for n in (8, 16, 32):
        choice = select_translation(rf, FiberLayout(f"1/{n}"), M=32 if n == 8 else 4, seed=0)
        assert choice.norm <= choice.mean_norm + 1e-12
        norms.append(choice.norm)
    assert max(norms) / min(norms) <= 1.5


def test_sweep_rng_reproducible():
    a = sweep_rng(3, "1/16").random(4)
    b = sweep_rng(3, 1 / 16).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sweep_rng(3, "1/8").random(4))


def test_bending_frame_at_layer_centre():
    bs = BendingSequence(2.0, 1 / 8)
    for i in range(8):
        x = np.array([bs.epsilon * (i + 0.5), 0.4, 0.7])
        G = bs.gradient(x)
        assert dist_SO3(G) < 1e-15
        np.testing.assert_allclose(G[:, 0], bs.normal(0.7))
        np.testing.assert_allclose(G[:, 2], bs.tangent(0.7))


@given(t=st.floats(0, 1))
def test_bending_frame_orthonormal(t):
    bs = BendingSequence(2.0, 1 / 8)
    g, n = bs.tangent(t), bs.normal(t)
    assert np.linalg.norm(g) == pytest.approx(1.0) and np.linalg.norm(n) == pytest.approx(1.0)
    assert abs(g @ n) < 1e-15 and abs(g[1]) == 0.0


def test_bending_continuity_and_gradient():
    bs = BendingSequence(2.0, 1 / 8)
    x = np.random.default_rng(6).random((1000, 3))
    fd = grad(VectorField3(bs, domain=UNIT), x)
    np.testing.assert_allclose(bs.gradient(x), fd, atol=1e-8)
    for j in range(1, 8):
        for edge in (bs.epsilon * (j - 0.25), bs.epsilon * (j + 0.25)):
            lo, hi = np.array([edge - 1e-13, 0.2, 0.6]), np.array([edge + 1e-13, 0.2, 0.6])
            assert np.linalg.norm(bs(lo) - bs(hi)) < 1e-11


def test_bending_energy_exponent_and_limit():
    p = 4
    rows = []
    for n in (8, 16, 32, 64):
        layout = FiberLayout(f"1/{n}")
        ue, u = bending_counterexample(BendingSequence(2.0, layout.eps), UNIT)
        rows.append((layout.eps, energy(ue, layout, EnergyDensitySpec(diagnostic_p=p), UNIT, soft=False)["rigid_dist_p"]))
    assert fit_rate(rows) == pytest.approx(p, abs=0.15)
    rep = membership_A0(bending_limit(2.0, UNIT))
    assert not rep["pass"] and rep["x3_dependence"] > 0.1


def test_bending_parameters():
    with pytest.raises(ValueError):
        BendingSequence(0.2, 0.1)
    with pytest.raises(ValueError):
        bending_counterexample(BendingSequence(2.0, 0.1, L=1.0), Domain3.box((0, 1), (0, 1), 2.0))


def test_perturb_beta_huge_beta_is_invisible():
    rf = _shear_rf()
    layout = FiberLayout("1/16")
    u = build(rf, layout)
    up = perturb_beta(u, 400, 4, layout.eps)
    x = np.random.default_rng(7).uniform([-1, -1, 0], [1, 1, 1], size=(200, 3))
    np.testing.assert_array_equal(up(x), u(x))
    en = energy(up, layout, EnergyDensitySpec(), rf.domain, soft=False)
    assert en["rigid_dist_p"] < 1e-30


def test_perturb_beta_energy_bound():
    p, beta = 4.0, 12.0
    rf = _shear_rf()
    layout = FiberLayout("1/16")
    up = perturb_beta(build(rf, layout), beta, p, layout.eps)
    en = energy(up, layout, EnergyDensitySpec(diagnostic_p=p), rf.domain, quad=QuadratureSpec(panels_per_eps=4), soft=False)
    assert 0 < en["rigid_dist_p"] <= 0.25 * layout.eps**beta * 2 * rf.domain.volume
    assert en["max_rigid_dist"] <= layout.eps ** (beta / p) * (1 + 1e-9)


def test_perturb_beta_requires_exact_gradient():
    with pytest.raises(ValueError):
        perturb_beta(VectorField3(lambda x: x, domain=UNIT), 12, 4, 0.1)
