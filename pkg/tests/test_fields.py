from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberlab.fields import (
    QuadratureSpec,
    SampledField,
    VectorField3,
    axis_rule,
    fiber_integral,
    gauss_rule,
    grad,
    integrate,
    lp_norm,
    second_diff_norm,
    translate_diff,
)
from fiberlab.geometry import Domain3, FiberLayout
from fiberlab.limit_deformations import preset
from fiberlab.so3 import axis_rotation, dist_SO3

UNIT = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)


def identity_field(domain=UNIT, exact=True):
    return VectorField3(lambda x: x.copy(), (lambda x: np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3))) if exact else None, domain=domain)


def test_grad_identity_exact_and_fd():
    x = np.array([[0.3, 0.4, 0.5], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(grad(identity_field(), x), np.broadcast_to(np.eye(3), (2, 3, 3)))
    np.testing.assert_allclose(grad(identity_field(exact=False), x), np.broadcast_to(np.eye(3), (2, 3, 3)), atol=1e-9)


def test_grad_shear_columns():
    u = preset("shear", gamma=1.0).deformation()
    G = grad(u, np.array([0.2, -0.3, 0.4]))
    np.testing.assert_allclose(G[:, 0], [1, 1, 0], atol=1e-14)
    np.testing.assert_allclose(G[:, 1], [0, 1, 0], atol=1e-14)
    np.testing.assert_allclose(G[:, 2], [0, 0, 1], atol=1e-14)


def test_grad_director_form_identity():
    def u(x):
        return x[..., 2:3] * np.array([0.0, 0.0, 1.0]) + np.stack([x[..., 0], x[..., 1], np.zeros(x.shape[:-1])], axis=-1)

    field = VectorField3(u, domain=UNIT)
    np.testing.assert_allclose(grad(field, np.array([0.5, 0.5, 0.5])), np.eye(3), atol=1e-9)


def test_grad_outside_domain_raises():
    with pytest.raises(ValueError):
        grad(identity_field(exact=False), np.array([1.5, 0.5, 0.5]))


@given(a=st.floats(-2, 2), b=st.floats(-2, 2), c=st.floats(-2, 2))
def test_fd_gradient_matches_polynomial(a, b, c):
    def f(x):
        return np.stack([a * x[..., 0] ** 2, b * x[..., 0] * x[..., 1], c * x[..., 2] ** 3], axis=-1)

    def g(x):
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., 0, 0] = 2 * a * x[..., 0]
        out[..., 1, 0] = b * x[..., 1]
        out[..., 1, 1] = b * x[..., 0]
        out[..., 2, 2] = 3 * c * x[..., 2] ** 2
        return out

    pts = np.array([[0.0, 0.5, 1.0], [0.5, 0.5, 0.5], [1.0, 0.0, 0.0]])
    fd = grad(VectorField3(f, domain=UNIT), pts)
    np.testing.assert_allclose(fd, g(pts), atol=1e-7)


def test_lp_norm_constant():
    c = np.array([3.0, 4.0, 0.0])
    assert lp_norm(lambda x: np.broadcast_to(c, x.shape), 4, UNIT) == pytest.approx(5.0, rel=1e-13)


def test_lp_norm_x3_p2():
    val = lp_norm(lambda x: x[..., 2], 2, UNIT, quad=QuadratureSpec(n3_per_unit=64))
    assert val == pytest.approx(1 / math.sqrt(3), abs=1e-4)


def test_lp_norm_rigid_motion_distance():
    R = axis_rotation((1, 2, 3), 0.7)
    u = VectorField3(lambda x: x @ R.T + 1.0, lambda x: np.broadcast_to(R, x.shape[:-1] + (3, 3)))
    assert lp_norm(lambda x: dist_SO3(grad(u, x)), 2, UNIT) < 1e-14


def test_lp_norm_rejects_nonfinite():
    with pytest.raises(ValueError):
        lp_norm(lambda x: np.full(x.shape[:-1], np.nan), 2, UNIT)


def test_rigid_region_volume_matches_fraction():
    layout = FiberLayout("1/8")
    vol = integrate(lambda x: np.ones(x.shape[:-1]), UNIT.bounds3, layout=layout, region="rigid")
    assert vol == pytest.approx(0.16, abs=1e-12)
    soft = integrate(lambda x: np.ones(x.shape[:-1]), UNIT.bounds3, layout=layout, region="soft")
    assert soft == pytest.approx(0.84, abs=1e-12)


def test_fiber_integral_matches_masked_rule():
    layout = FiberLayout("1/8")

    def f(x):
        return x[..., 0] ** 2 + x[..., 2]

    masked = integrate(f, UNIT.bounds3, layout=layout, region="rigid")
    assert fiber_integral(f, layout, UNIT.bounds3) == pytest.approx(masked, rel=1e-12)


def test_translate_diff_constant_and_zero_shift():
    U = ((0.25, 0.75), (0.25, 0.75))
    assert translate_diff(lambda x: np.ones(x.shape[:-1]), (0.1, 0.05), 4, U) == 0.0
    assert translate_diff(lambda x: x[..., 0], (0.0, 0.0), 4, U) == 0.0


@pytest.mark.parametrize("t, p", [(0.1, 2), (0.05, 4), (0.2, 1.5)])
def test_translate_diff_linear(t, p):
    U = ((0.25, 0.75), (0.25, 0.5))
    assert translate_diff(lambda x: x[..., 0], (t, 0.0), p, U) == pytest.approx(0.125 * t**p, rel=1e-12)


def test_translate_diff_shift_too_large():
    with pytest.raises(ValueError):
        translate_diff(lambda x: x[..., 0], (0.3, 0.0), 2, ((0.25, 0.75), (0.25, 0.75)), omega=((0, 1), (0, 1)))


def test_second_diff_affine_zero():
    u = VectorField3(lambda x: x @ np.array([[1.0, 2, 0], [0, 1, 3], [1, 0, 1]]).T, domain=UNIT)
    assert second_diff_norm(u, 0, 1, 2, UNIT) < 1e-6


def test_second_diff_paraboloid():
    df = preset("paraboloid")
    dom = df.domain
    val = second_diff_norm(df.deformation(), 0, 0, 4, dom)
    assert val == pytest.approx(2 * dom.volume ** (1 / 4), rel=1e-12)
    fd = second_diff_norm(VectorField3(df, domain=dom), 0, 0, 4, dom, h=1e-3)
    assert fd == pytest.approx(2 * dom.volume ** (1 / 4), rel=1e-6)


def test_second_diff_twist_x2():
    df = preset("twist")
    assert second_diff_norm(df.deformation(), 1, 1, 4, df.domain) == pytest.approx(0.0, abs=1e-12)


def test_axis_rule_respects_breaks():
    nodes, w = axis_rule(0.0, 1.0, 0.1, breaks=[0.33, 0.5])
    assert w.sum() == pytest.approx(1.0)
    edges = np.concatenate([nodes - w / 2, nodes + w / 2])
    for b in (0.33, 0.5):
        assert np.any(np.isclose(edges, b))


def test_gauss_rule_exact_for_polynomials():
    x, w = gauss_rule(-1.0, 3.0, 4)
    assert np.sum(w * x**7) == pytest.approx((3.0**8 - 1.0) / 8, rel=1e-13)


def test_sampled_field_round_trip(tmp_path):
    def f(x):
        return np.stack([x[..., 0] + 2 * x[..., 1], x[..., 2], -x[..., 0]], axis=-1)

    s = SampledField.from_function(f, UNIT, (5, 4, 3))
    pts = np.array([[0.3, 0.7, 0.2], [1.0, 1.0, 1.0]])
    np.testing.assert_allclose(s(pts), f(pts), atol=1e-14)
    np.testing.assert_allclose(grad(s, pts), grad(VectorField3(f, domain=UNIT), pts), atol=1e-8)
    path = tmp_path / "grid.txt"
    s.save(path)
    again = SampledField.load(path)
    np.testing.assert_array_equal(again.values, s.values)
    np.testing.assert_allclose(again(pts), s(pts))
