from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberlab.fields import QuadratureSpec, VectorField3
from fiberlab.geometry import Domain3, FiberLayout
from fiberlab.limit_deformations import RotationForm, preset, to_rotation_form
from fiberlab.reports import fit_rate
from fiberlab.rigidity_analysis import (
    EnergyDensitySpec,
    Lemma31Config,
    PiecewiseRotationField,
    deviation_measure,
    difference_quotient_norm,
    energy,
    extract_rotations,
    fk_modulus,
    lemma31_minimize,
    lemma31_rhs,
    lemma31_verify,
    perturbed_interpolant,
    piecewise_rigid_error,
    regularized_check,
    sheared_interpolant,
    v_field,
)
from fiberlab.sequence_builder import BendingSequence, bending_counterexample, build
from fiberlab.so3 import axis_rotation

UNIT = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)
R0 = axis_rotation((0.3, 1.0, -0.4), 1.1)
B0 = np.array([0.5, -1.0, 2.0])


def _rigid_field():
    return VectorField3(lambda x: np.asarray(x) @ R0.T + B0, lambda x: np.broadcast_to(R0, np.shape(x)[:-1] + (3, 3)), domain=UNIT)


def _constant_prf(layout=FiberLayout("1/8"), n=8):
    cells = np.array([(i, j) for i in range(n) for j in range(n)])
    return PiecewiseRotationField(layout, cells, np.broadcast_to(R0, (len(cells), 3, 3)).copy(), np.zeros((len(cells), 3)))


# -- per-fiber rotations --------------------------------------------------------


def test_rigid_motion_is_recovered_exactly():
    layout = FiberLayout("1/8")
    prf = extract_rotations(_rigid_field(), layout, UNIT)
    np.testing.assert_allclose(prf.rotations, np.broadcast_to(R0, prf.rotations.shape), atol=1e-14)
    np.testing.assert_allclose(prf.translations, np.broadcast_to(B0, prf.translations.shape), atol=1e-14)
    assert piecewise_rigid_error(_rigid_field(), prf, 2, UNIT) < 1e-13


def test_shear_rotations_match_fiber_rotations():
    rf = to_rotation_form(preset("shear", gamma=1.0))
    layout = FiberLayout("1/8")
    u = build(rf, layout)
    prf = extract_rotations(u, layout, rf.domain)
    np.testing.assert_allclose(prf.rotations, u.fiber_rotations(prf.cells), atol=1e-10)


def test_piecewise_rigid_error_rate():
    rf = to_rotation_form(preset("shear", gamma=1.0))
    rows = []
    for n in (8, 16, 32):
        layout = FiberLayout(f"1/{n}")
        u = build(rf, layout)
        prf = extract_rotations(u, layout, rf.domain)
        rows.append((layout.eps, piecewise_rigid_error(u, prf, 2, rf.domain)))
    assert fit_rate(rows) >= 0.9


def test_extract_rejects_empty_window():
    with pytest.raises(ValueError):
        extract_rotations(_rigid_field(), FiberLayout("1/2"), Domain3.box((0, 0.4), (0, 0.4), 1.0))


def test_prf_lookup_outside_is_nan():
    prf = _constant_prf()
    assert np.all(np.isnan(prf.sigma(np.array([[2.0, 0.5]]))))
    np.testing.assert_array_equal(prf.sigma(np.array([[0.5, 0.5]]))[0], R0[:, 2])
    assert prf.box == ((0.0, 1.0), (0.0, 1.0))
    assert len(prf.table()) == 64 and len(prf.table()[0]) == 14


# -- translation moduli -----------------------------------------------------------


def test_fk_constant_director_has_zero_modulus():
    prf = _constant_prf()
    res = fk_modulus(prf, [(0.125, 0.0), (0.0, 0.25), (0.125, 0.125)], 4, ((0.25, 0.75), (0.25, 0.75)))
    assert res.C == 0.0 and all(r.value == 0.0 for r in res.rows)


def test_fk_zero_shift_row():
    res = fk_modulus(_constant_prf(), [(0.0, 0.0)], 4, ((0.25, 0.75), (0.25, 0.75)))
    assert res.rows[0].value == 0.0 and res.rows[0].xi_norm == 0.0


def test_fk_rejects_long_shift():
    with pytest.raises(ValueError):
        fk_modulus(_constant_prf(), [(0.5, 0.0)], 4, ((0.25, 0.75), (0.25, 0.75)))
    with pytest.raises(ValueError):
        fk_modulus(_constant_prf(), [(0.2, 0.0)], 4, ((0.25, 0.75), (0.25, 0.75)), omega=((0, 1), (0, 1)))


def test_difference_quotient_constant_is_zero():
    def Sigma(xp):
        return np.broadcast_to([0.0, 0.0, 1.0], np.shape(xp)[:-1] + (3,))

    assert difference_quotient_norm(Sigma, [(0.1, 0.0), (0.0, 0.1)], 2, ((0, 1), (0, 1))) == 0.0


def test_difference_quotient_approaches_gradient_norm():
    df = preset("twist")
    region = ((0.5, 3.5), (0.25, 0.75))
    p = 4
    # |d1 Sigma| = 1/pi everywhere, d2 Sigma = 0
    exact = (1.5 * math.pi**-p) ** (1 / p)
    val = difference_quotient_norm(df.sigma, [(1e-3, 0.0)], p, region, omega=((0, 4), (0, 1)))
    assert val == pytest.approx(exact, rel=0.1)


def test_difference_quotient_of_step_blows_up():
    p = 2.0

    def step(xp):
        v = (np.asarray(xp)[..., 0] > 0.5).astype(float)
        return np.stack([v, 0 * v, 0 * v], axis=-1)

    rows = []
    for h in (1e-1, 1e-2, 1e-3):
        rows.append((h, difference_quotient_norm(step, [(h, 0.0)], p, ((0.2, 0.8), (0, 1)), breaks=[(0.5,), ()])))
    assert fit_rate(rows) == pytest.approx((1 - p) / p, abs=0.02)


# -- affine switching bound --------------------------------------------------------


def test_lemma31_rhs_examples():
    A1 = np.eye(3)
    assert lemma31_rhs(2, 1, 1, 1, 0, A1, A1) == 0.0
    A2 = np.eye(3)
    A2[:, 2] += [1.0, 0.0, 0.0]
    assert lemma31_rhs(2, 1, 1, 1, 0, A1, A2) == pytest.approx(1 / 12)
    base = lemma31_rhs(3, 1, 1, 1, 0, A1, A2)
    assert lemma31_rhs(3, 2, 1, 1, 0, A1, A2) == pytest.approx(base / 4)
    assert lemma31_rhs(3, 1, 1, 2, 0, A1, A2) == pytest.approx(base * 16)
    assert lemma31_rhs(3, 1, 1, 1, 1, A1, A2) == pytest.approx(base / 2**1.5)
    with pytest.raises(ValueError):
        lemma31_rhs(0.5, 1, 1, 1, 0, A1, A2)
    with pytest.raises(ValueError):
        lemma31_rhs(2, 0, 1, 1, 0, A1, A2)


@settings(max_examples=15)
@given(seed=st.integers(0, 10_000), optimal=st.booleans())
def test_lemma31_bound_holds(seed, optimal):
    rng = np.random.default_rng(seed)
    cfg = Lemma31Config.random(rng, p=float(rng.choice([2.0, 4.0])), optimal=optimal)
    for v in (sheared_interpolant(cfg), perturbed_interpolant(cfg, rng)):
        res = lemma31_verify(v, cfg)
        assert res["ratio"] >= 1 - 1e-9


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_lemma31_optimal_is_sharp(p):
    cfg = Lemma31Config.random(np.random.default_rng(11), p=p, optimal=True)
    assert lemma31_verify(sheared_interpolant(cfg), cfg)["ratio"] == pytest.approx(1.0, abs=1e-12)


def test_lemma31_trace_violation_raises():
    cfg = Lemma31Config.random(np.random.default_rng(2), p=2.0)
    bad = VectorField3(lambda x: cfg.w1(x) + 1.0)
    with pytest.raises(ValueError):
        lemma31_verify(bad, cfg)


def test_lemma31_constant_traces_give_zero():
    c = np.array([1.0, -2.0, 0.5])
    cfg = Lemma31Config(2.0, 1.0, 1.0, 1.0, 0.2, np.zeros((3, 3)), c, np.zeros((3, 3)), c)
    v = VectorField3(lambda x: np.broadcast_to(c, np.shape(x)), lambda x: np.zeros(np.shape(x)[:-1] + (3, 3)))
    res = lemma31_verify(v, cfg)
    assert res["lhs"] == 0.0 and res["rhs"] == 0.0 and res["ratio"] == 1.0


def test_lemma31_minimizer_close_to_bound():
    cfg = Lemma31Config.random(np.random.default_rng(5), p=2.0, optimal=True, L=(1.0, 1.0, 1.0))
    res = lemma31_minimize(cfg, n=13)
    assert res["ratio"] == pytest.approx(1.0, rel=0.05)


# -- energies ------------------------------------------------------------------------


def test_energy_of_rigid_motion():
    en = energy(_rigid_field(), FiberLayout("1/4"), EnergyDensitySpec(), UNIT)
    assert en["soft"] == pytest.approx(0.0, abs=1e-25)
    assert en["rigid"] == 0.0 and en["feasible"]


def test_energy_of_shear_sequence():
    rf = to_rotation_form(preset("shear", gamma=1.0))
    layout = FiberLayout("1/4")
    en = energy(build(rf, layout), layout, EnergyDensitySpec(), rf.domain, quad=QuadratureSpec(panels_per_eps=4))
    assert en["feasible"] and en["soft"] > 0 and en["rigid_dist_p"] < 1e-40


def test_energy_of_bending_sequence_is_infeasible():
    layout = FiberLayout("1/8")
    ue, _ = bending_counterexample(BendingSequence(2.0, layout.eps), UNIT)
    en = energy(ue, layout, EnergyDensitySpec(), UNIT, soft=False)
    assert not en["feasible"] and en["rigid"] == math.inf and math.isnan(en["soft"])


def test_stvk_density_vanishes_on_rotations():
    spec = EnergyDensitySpec(soft="stvk_like", p=2.0)
    assert spec.soft_density(R0) == pytest.approx(0.0, abs=1e-14)
    assert spec.soft_density(2 * np.eye(3)) > 0
    with pytest.raises(ValueError):
        EnergyDensitySpec(soft="neo")


# -- regularised pathway --------------------------------------------------------------


def test_v_field_of_rigid_motion():
    layout = FiberLayout("1/8")
    prf = extract_rotations(_rigid_field(), layout, UNIT)
    V = v_field(_rigid_field(), prf, 1.0)
    np.testing.assert_allclose(V(np.array([[0.3, 0.6], [0.7, 0.2]])), np.broadcast_to(R0, (2, 3, 3)), atol=1e-13)


def test_regularized_check_on_twist():
    df = preset("twist")
    rf = to_rotation_form(df)
    seq = []
    for n in (16, 32):
        layout = FiberLayout(f"1/{n}")
        seq.append((layout, build(rf, layout), rf.domain))
    res = regularized_check(seq, 2.0, xi_factors=((1, 0), (0, 1)), region=((1.0, 3.0), (0.25, 0.75)), limit_gradient=df.gradient)
    assert len(res["rows"]) == 2 and len(res["second_diff_growth"]) == 1
    for row in res["rows"]:
        assert row["V_dist_rigid"] < 1e-10
        assert np.isfinite(row["fk_rescaled"]) and row["V_dist_limit"] >= 0
    assert res["rows"][1]["V_dist_limit"] < res["rows"][0]["V_dist_limit"]


def test_deviation_measure():
    region = ((0.0, 1.0), (0.0, 1.0))

    def rot(xp):
        return np.broadcast_to(R0, np.shape(xp)[:-1] + (3, 3))

    assert deviation_measure(rot, 0.1, region) == 0.0
    gamma = 0.05

    def stretched(xp):
        xp = np.asarray(xp)
        inside = ((xp[..., 0] > 0.25) & (xp[..., 0] < 0.75) & (xp[..., 1] < 0.5))[..., None, None]
        return np.where(inside, np.eye(3) + np.diag([2 * gamma] * 3), np.eye(3))

    assert deviation_measure(stretched, gamma, region, quad=QuadratureSpec(panels_per_eps=64)) == pytest.approx(0.25, abs=0.02)
    with pytest.raises(ValueError):
        deviation_measure(rot, 0.0, region)
