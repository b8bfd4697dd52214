from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberlab.fields import VectorField3, grad
from fiberlab.geometry import Domain3
from fiberlab.limit_deformations import (
    PRESETS,
    DirectorForm,
    RotationForm,
    director_unit_defect,
    incompressibility,
    lift_R,
    lift_S,
    membership_A0,
    membership_B0,
    preset,
    round_trip_residual,
    to_director_form,
    to_rotation_form,
)
from fiberlab.so3 import axis_rotation

UNIT = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)


def test_preset_point_values():
    np.testing.assert_allclose(preset("shear", gamma=1.0)(np.array([1.0, 0.0, 1.0])), [1, 1, 1], atol=1e-15)
    for t in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(preset("paraboloid")(np.array([0.0, 0.0, t])), [0, 0, t], atol=1e-15)
    for x2 in (0.0, 0.4, 1.0):
        np.testing.assert_allclose(preset("twist")(np.array([0.0, x2, 0.0])), [0, x2, 0], atol=1e-15)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_have_unit_directors_and_exact_gradients(name):
    df = preset(name)
    assert director_unit_defect(df) <= 1e-12
    u = df.deformation()
    rng = np.random.default_rng(0)
    lo, hi = np.array(df.domain.bounds3).T
    x = lo + 0.1 * (hi - lo) + 0.8 * (hi - lo) * rng.random((20, 3))
    fd = grad(VectorField3(df, domain=df.domain), x)
    np.testing.assert_allclose(grad(u, x), fd, atol=1e-7)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_belong_to_A0(name):
    assert membership_A0(preset(name).deformation())["pass"]


def test_preset_errors():
    with pytest.raises(ValueError):
        preset("tyre", r=1.0)
    with pytest.raises(ValueError):
        preset("bending_limit")
    with pytest.raises(ValueError):
        preset("twist", gamma=2.0)
    with pytest.raises(ValueError):
        preset("rigid", R0=np.diag([1.0, 1.0, -1.0]))


def test_lift_examples():
    e1 = np.array([1.0, 0.0, 0.0])
    R = lift_R(e1)
    np.testing.assert_allclose(R[:, 0], [0, 0, -1], atol=1e-15)
    np.testing.assert_allclose(R[:, 1], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(R[:, 2], e1, atol=1e-15)
    S = lift_S(e1)
    np.testing.assert_allclose(S[:, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(S[:, 1], [0, 0, 1], atol=1e-15)
    assert np.linalg.det(R) == pytest.approx(1.0) and np.linalg.det(S) == pytest.approx(1.0)


@pytest.mark.parametrize("lift", [lift_R, lift_S])
def test_lift_pole_error(lift):
    with pytest.raises(ValueError):
        lift(np.array([0.0, 0.0, 1.0]))


unit_vectors = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).map(np.array).filter(lambda v: 0.5 < np.linalg.norm(v))


@given(unit_vectors)
def test_lifts_are_rotations_with_given_third_column(v):
    S = v / np.linalg.norm(v)
    if S[0] ** 2 + S[1] ** 2 < 1e-2:
        return
    for lift in (lift_R, lift_S):
        R = lift(S)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(R[:, 2], S, atol=1e-12)


def _identity_director():
    return DirectorForm(
        lambda xp: np.broadcast_to([0.0, 0.0, 1.0], xp.shape[:-1] + (3,)),
        lambda xp: np.concatenate([xp, np.zeros(xp.shape[:-1] + (1,))], axis=-1),
        lambda xp: np.zeros(xp.shape[:-1] + (3, 2)),
        lambda xp: np.broadcast_to(np.array([[1.0, 0], [0, 1], [0, 0]]), xp.shape[:-1] + (3, 2)),
        UNIT,
        "identity",
    )


def test_identity_round_trip_needs_pre_rotation():
    df = _identity_director()
    rf = to_rotation_form(df)
    assert not np.allclose(rf.pre_rotation, np.eye(3))
    x = np.random.default_rng(1).random((30, 3))
    np.testing.assert_allclose(rf(x), x, atol=1e-14)
    np.testing.assert_allclose(rf.R(x[:, :2])[..., :, 2], np.broadcast_to([0, 0, 1.0], (30, 3)), atol=1e-15)
    with pytest.raises(ValueError):
        to_rotation_form(df, pre_rotation=np.eye(3)).R(x[:, :2])


@pytest.mark.parametrize("name", ["shear", "hedgehog", "twist", "paraboloid", "trophy"])
@pytest.mark.parametrize("lift", ["R", "S"])
def test_rotation_form_round_trip(name, lift):
    df = preset(name)
    rf = to_rotation_form(df, lift=lift)
    assert round_trip_residual(df, rf) <= 1e-10
    back = to_director_form(rf)
    xp = df.domain.lo[:2] + (df.domain.hi[:2] - df.domain.lo[:2]) * np.random.default_rng(2).random((25, 2))
    np.testing.assert_allclose(back.sigma(xp), df.sigma(xp), atol=1e-12)
    np.testing.assert_allclose(back.sigma_grad(xp), df.sigma_grad(xp), atol=1e-10)
    np.testing.assert_allclose(back.d_grad(xp), df.d_grad(xp), atol=1e-10)


def test_rotation_form_gradient_matches_finite_differences():
    rf = to_rotation_form(preset("hedgehog"))
    x = np.array([[0.3, -0.2, 0.5], [-0.6, 0.1, 0.2]])
    fd = grad(VectorField3(rf, domain=rf.domain), x)
    np.testing.assert_allclose(rf.gradient(x), fd, atol=1e-7)


def test_membership_A0_failures():
    stretched = VectorField3(lambda x: x * np.array([1.0, 1.0, 2.0]), domain=UNIT)
    rep = membership_A0(stretched)
    assert not rep["pass"] and rep["unit_defect"] == pytest.approx(1.0, abs=1e-6)


def test_membership_B0_cases():
    assert membership_B0(preset("twist").deformation())["pass"]
    assert not membership_B0(preset("hedgehog").deformation())["pass"]
    R0 = axis_rotation((1, 2, 0), 0.4)
    assert membership_B0(RotationForm.constant(R0, (1.0, 0.0, 2.0), UNIT).deformation())["pass"]


def test_incompressibility_gallery():
    par = incompressibility(preset("paraboloid"))
    assert par["det_residual"] <= 1e-10 and par["parallel_residual"] <= 1e-10
    assert incompressibility(preset("hedgehog"))["parallel_residual"] > 0.1
    tyre = incompressibility(preset("tyre"))
    assert tyre["parallel_residual"] <= 1e-10 and tyre["det_residual"] > 0.1


def test_sampled_rotation_form_reproduces_twist():
    df = preset("twist")
    rf = to_rotation_form(df)
    ax = [np.linspace(0, 4, 81), np.linspace(0, 1, 21)]
    G = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    srf = RotationForm.sampled(ax, rf.R(G), rf.b(G), domain=df.domain)
    xp = np.array([[1.03, 0.41], [2.5, 0.5]])
    R = srf.R(xp)
    np.testing.assert_allclose(np.swapaxes(R, -1, -2) @ R, np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
    np.testing.assert_allclose(R, rf.R(xp), atol=5e-3)
