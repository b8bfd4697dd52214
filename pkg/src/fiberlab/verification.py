"""Desk-scale checks of the construction and rigidity claims, one per criterion.

Every check is deterministic for a fixed :class:`VerifyConfig`; the report
text produced by :func:`run_verify` is byte-stable across runs.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .approx_identity import ApproxIdentity, sup_deviation, verify_properties
from .fields import QuadratureSpec
from .geometry import Domain3, FiberLayout
from .limit_deformations import (
    LIFTS,
    RotationForm,
    incompressibility,
    membership_A0,
    membership_B0,
    preset,
    to_rotation_form,
)
from .reports import ConvergenceReport, fit_rate
from .rigidity_analysis import (
    EnergyDensitySpec,
    Lemma31Config,
    energy,
    extract_rotations,
    fk_modulus,
    lemma31_minimize,
    lemma31_verify,
    perturbed_interpolant,
    piecewise_rigid_error,
    regularized_check,
    sheared_interpolant,
)
from .sequence_builder import BendingSequence, bending_counterexample, build, convergence_error, perturb_beta
from .so3 import axis_rotation, dist_SO3

ALL_CRITERIA = tuple(range(1, 13))

TITLES = {
    1: "exact membership on fibers",
    2: "convergence to the limit",
    3: "approximate identity properties",
    4: "rotation lifts",
    5: "incompressibility gallery",
    6: "affine switching lower bound",
    7: "translation modulus constant",
    8: "bending counterexample",
    9: "approximate inclusion regime",
    10: "regularized rigidity diagnostics",
    11: "SO(3) distance oracle",
    12: "determinism",
}

ENERGY_QUAD = QuadratureSpec(panels_per_eps=4, n3_per_unit=2)


@dataclass(frozen=True)
class VerifyConfig:
    seed: int = 0
    p: float = 4.0
    alpha: float = 0.25
    delta: float = 0.4
    criteria: tuple = ALL_CRITERIA
    repeat: bool = True  # criterion 12 re-runs everything and compares bytes

    def layout(self, eps) -> FiberLayout:
        return FiberLayout(eps, alpha=self.alpha, delta=self.delta)


@dataclass
class Outcome:
    criterion: int
    passed: bool
    detail: str
    rows: list = field(default_factory=list)  # (eps, metric, value)


def _e(x: float) -> str:
    return f"{x:.3e}"


def _eps_list(*names: str) -> list[Fraction]:
    return [Fraction(n) for n in names]


def _twist_square() -> tuple[RotationForm, Domain3]:
    # a square cross-section leaves room for shifts of a few eps around the centre
    dom = Domain3.box((0.0, 4.0), (0.0, 4.0), 1.0)
    return to_rotation_form(preset("twist", dom)), dom


TWIST_REGION = ((1.25, 2.75), (1.25, 2.75))


def _fk_shifts(eps: float) -> list[np.ndarray]:
    dirs = (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0]) / math.sqrt(2.0))
    return [t * eps * d for t in (1, 2, 4) for d in dirs]


def _window(region, reach: float):
    return tuple((lo - reach, hi + reach) for lo, hi in region)


class Verifier:
    """Runs the criteria, sharing sequences between the ones that reuse them."""

    def __init__(self, config: VerifyConfig = VerifyConfig()):
        self.config = config
        self._cache: dict = {}

    def _memo(self, key, make: Callable):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    # -- shared sequences --------------------------------------------------------------

    def _membership_sequence(self, name: str, eps: Fraction):
        params = {"gamma": 1.0} if name == "shear" else {}

        def make():
            df = preset(name, **params)
            rf = self._memo(("rf", name), lambda: to_rotation_form(df))
            layout = self.config.layout(eps)
            return df, layout, build(rf, layout, domain=df.domain)

        return self._memo(("seq", name, eps), make)

    def _twist_fk(self, eps: Fraction, perturbed: bool):
        def make():
            rf, dom = self._memo("twist_square", _twist_square)
            layout = self.config.layout(eps)
            u = build(rf, layout, domain=dom)
            if perturbed:
                u = perturb_beta(u, 3 * self.config.p, self.config.p, layout.eps)
            e = layout.eps
            prf = extract_rotations(u, layout, dom, window=_window(TWIST_REGION, 5 * e))
            fk = fk_modulus(prf, _fk_shifts(e), self.config.p, TWIST_REGION, omega=dom.cross_section)
            return layout, u, prf, fk, dom

        return self._memo(("twist_fk", eps, perturbed), make)

    # -- criteria ----------------------------------------------------------------------

    def criterion_1(self) -> Outcome:
        rng = np.random.default_rng(self.config.seed)
        worst = 0.0
        rows = []
        for name in ("shear", "twist", "paraboloid"):
            for eps in _eps_list("1/8", "1/16", "1/32"):
                df, layout, u = self._membership_sequence(name, eps)
                cells = layout.interior_cells(df.domain)
                pick = cells[rng.integers(len(cells), size=10_000)]
                lo, hi = layout.square_bounds(pick)
                xp = lo + (hi - lo) * rng.uniform(1e-9, 1 - 1e-9, size=(10_000, 2))
                x = np.c_[xp, rng.uniform(0, df.domain.L, size=10_000)]
                d = float(np.max(dist_SO3(u.gradient(x))))
                rows.append((float(eps), f"{name}:max_rigid_dist", d))
                worst = max(worst, d)
        return Outcome(1, worst <= 1e-10, f"max dist {_e(worst)} <= 1e-10", rows)

    def criterion_2(self) -> Outcome:
        p = self.config.p
        rows, notes, ok = [], [], True
        for name in ("shear", "twist", "paraboloid"):
            errs = []
            for eps in _eps_list("1/8", "1/16", "1/32"):
                df, layout, u = self._membership_sequence(name, eps)
                err = convergence_error(u, df.deformation(), p, layout, df.domain)
                errs.append((float(eps), err))
                rows.append((float(eps), f"{name}:Lp_error", err))
            decreasing = all(b[1] < a[1] for a, b in zip(errs, errs[1:]))
            slope = fit_rate(errs)
            ok = ok and decreasing and slope >= 0.9
            notes.append(f"{name} slope {slope:.3f}{'' if decreasing else ' (not decreasing)'}")
        return Outcome(2, ok, "; ".join(notes) + " (need >= 0.9)", rows)

    def criterion_3(self) -> Outcome:
        a = self.config.alpha
        unit = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)
        layout = self.config.layout(Fraction(1, 8))
        ident = ApproxIdentity.for_layout(layout, unit)
        props = verify_properties(ident, layout, unit, seed=self.config.seed)
        sup = props["i"]["sup_norm"]
        grad_ok = abs(sup - math.sqrt(2.0) / (2 * a)) <= 1e-12 and sup < 1 / a
        devs, rows = [], []
        for eps in _eps_list("1/8", "1/16", "1/32", "1/64", "1/128"):
            lay = self.config.layout(eps)
            dev = sup_deviation(ApproxIdentity.for_layout(lay, unit), unit.cross_section)
            devs.append((float(eps), dev))
            rows.append((float(eps), "sup_deviation", dev))
        slope = fit_rate(devs)
        ok = grad_ok and props["ii"]["pass"] and props["iii"]["pass"] and abs(slope - 1.0) <= 0.1
        detail = (
            f"grad sup {sup!r}, fibers constant {props['ii']['pass']}, "
            f"{props['iii']['cells']} cell images disjoint {props['iii']['pass']}, uniform slope {slope:.3f}"
        )
        return Outcome(3, ok, detail, rows)

    def criterion_4(self) -> Outcome:
        rng = np.random.default_rng(self.config.seed)
        S = rng.normal(size=(40_000, 3))
        S /= np.linalg.norm(S, axis=-1, keepdims=True)
        S = S[S[:, 0] ** 2 + S[:, 1] ** 2 >= 1e-2][:10_000]
        worst = 0.0
        for lift in LIFTS.values():
            R = lift(S)
            orth = np.max(np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)))
            det = np.max(np.abs(np.linalg.det(R) - 1.0))
            col = np.max(np.abs(R[..., :, 2] - S))
            worst = max(worst, float(orth), float(det), float(col))
        e1 = np.array([1.0, 0.0, 0.0])
        gap = float(np.linalg.norm(LIFTS["R"](e1) - LIFTS["S"](e1)))
        ok = worst <= 1e-12 and gap >= 0.1
        return Outcome(4, ok, f"{len(S)} directors, worst residual {_e(worst)}, |R-S| at e1 {gap:.3f}")

    def criterion_5(self) -> Outcome:
        res = {name: incompressibility(preset(name)) for name in ("paraboloid", "shear", "twist", "hedgehog", "trophy", "tyre")}
        flat = all(res[n]["det_residual"] <= 1e-10 and res[n]["parallel_residual"] <= 1e-10 for n in ("paraboloid", "shear", "twist"))
        curved = all(res[n]["parallel_residual"] >= 0.1 for n in ("hedgehog", "trophy"))
        tyre = res["tyre"]["parallel_residual"] <= 1e-10 and res["tyre"]["det_residual"] >= 0.1
        rows = [(0.0, f"{n}:{k}", v) for n in res for k, v in res[n].items()]
        detail = ", ".join(f"{n} det {_e(r['det_residual'])} par {_e(r['parallel_residual'])}" for n, r in res.items())
        return Outcome(5, flat and curved and tyre, detail, rows)

    def criterion_6(self) -> Outcome:
        rng = np.random.default_rng(self.config.seed)
        worst = math.inf
        for case in range(100):
            # half of the configurations realise the bound, so the check is tight
            cfg = Lemma31Config.random(rng, optimal=case % 2 == 0)
            for j in range(20):
                v = sheared_interpolant(cfg) if j == 0 else perturbed_interpolant(cfg, rng, amplitude=float(rng.uniform(0.05, 1.0)))
                worst = min(worst, lemma31_verify(v, cfg)["ratio"])
        brute = []
        for case in range(3):
            cfg = Lemma31Config.random(rng, p=2.0, m=0.0, optimal=True, L=(1.0, 1.0, 1.0))
            closed = float(np.linalg.norm((cfg.A2 - cfg.A1)[:, 2]) ** 2 / 12)
            res = lemma31_minimize(cfg, n=17)
            brute.append(res["lhs"] / closed)
        brute_ok = all(abs(r - 1.0) <= 0.05 for r in brute)
        rows = [(0.0, "min_ratio", worst)] + [(0.0, f"minimizer_ratio_{i}", r) for i, r in enumerate(brute)]
        detail = f"min lhs/rhs {worst:.4f} (need >= 0.98), minimizer lhs/rhs {', '.join(f'{r:.4f}' for r in brute)}"
        return Outcome(6, worst >= 0.98 and brute_ok, detail, rows)

    def criterion_7(self) -> Outcome:
        Cs, rows = [], []
        for eps in _eps_list("1/8", "1/16", "1/32", "1/64"):
            fk = self._twist_fk(eps, False)[3]
            Cs.append(fk.C)
            rows.append((float(eps), "fitted_C", fk.C))
        spread = max(Cs) / min(Cs)
        return Outcome(7, spread <= 2.0, f"C from {min(Cs):.4g} to {max(Cs):.4g}, max/min {spread:.3f} (need <= 2)", rows)

    def criterion_8(self) -> Outcome:
        p = self.config.p
        dom = Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)
        spec = EnergyDensitySpec(diagnostic_p=p)
        vals, rows = [], []
        u = None
        for eps in _eps_list("1/8", "1/16", "1/32", "1/64", "1/128"):
            layout = self.config.layout(eps)
            bs = BendingSequence(2.0, layout.eps, alpha=self.config.alpha, L=dom.L)
            ue, u = bending_counterexample(bs, dom)
            en = energy(ue, layout, spec, dom, soft=False)
            vals.append((float(eps), en["rigid_dist_p"]))
            rows.append((float(eps), "rigid_dist_p", en["rigid_dist_p"]))
        slope = fit_rate(vals)
        witness = float(np.linalg.norm(bs.tangent(0.0) - bs.tangent(dom.L / 2)))
        a0 = membership_A0(u, domain=dom)
        b0 = membership_B0(u, domain=dom)
        ok = abs(slope - p) <= 0.15 and not a0["pass"] and witness >= 0.1 and b0["affine_x2"] <= 1e-9 and b0["affine_x3"] > 1e-9
        detail = (
            f"energy slope {slope:.3f}, A0 {'pass' if a0['pass'] else 'fail'} with tangent gap {witness:.3f}, "
            f"affine defect x2 {_e(b0['affine_x2'])} x3 {_e(b0['affine_x3'])}"
        )
        return Outcome(8, ok, detail, rows)

    def criterion_9(self) -> Outcome:
        p = self.config.p
        beta = 3 * p
        spec = EnergyDensitySpec(diagnostic_p=p)
        rows, ok = [], True
        err_ratios, c_ratios, energies = [], [], []
        for eps in _eps_list("1/8", "1/16", "1/32"):
            layout, u0, prf0, fk0, dom = self._twist_fk(eps, False)
            _, u1, prf1, fk1, _ = self._twist_fk(eps, True)
            e0 = piecewise_rigid_error(u0, prf0, p, dom)
            e1 = piecewise_rigid_error(u1, prf1, p, dom)
            en = energy(u1, layout, spec, dom, quad=ENERGY_QUAD, soft=False)["rigid_dist_p"]
            err_ratios.append(e1 / e0)
            c_ratios.append(fk1.C / fk0.C)
            energies.append((float(eps), en))
            rows += [(float(eps), "rigid_error_ratio", e1 / e0), (float(eps), "fitted_C_ratio", fk1.C / fk0.C), (float(eps), "rigid_dist_p", en)]
        slope = fit_rate(energies)
        ok = all(0.5 <= r <= 2.0 for r in err_ratios + c_ratios) and slope >= beta - 0.3
        detail = (
            f"beta {beta:g}: error ratios {', '.join(f'{r:.4f}' for r in err_ratios)}, "
            f"C ratios {', '.join(f'{r:.4f}' for r in c_ratios)}, energy slope {slope:.3f}"
        )
        return Outcome(9, ok, detail, rows)

    def criterion_10(self) -> Outcome:
        p = self.config.p
        dom = Domain3.box((0.0, 4.0), (0.0, 4.0), 1.0)
        region = ((1.5, 2.5), (1.5, 2.5))
        eps_list = _eps_list("1/8", "1/16", "1/32")
        R0 = axis_rotation((1.0, 1.0, 0.0), 0.3)
        rigid = RotationForm.constant(R0, (0.1, 0.0, 0.0), domain=dom)
        twist, _ = self._memo("twist_square", _twist_square)
        out = {}
        for name, rf in (("rigid", rigid), ("twist", twist)):
            seq = []
            for eps in eps_list:
                layout = self.config.layout(eps)
                seq.append((layout, build(rf, layout, domain=dom), dom))
            out[name] = regularized_check(seq, p, region=region)
        rows = []
        for name, res in out.items():
            for r in res["rows"]:
                rows += [(r["eps"], f"{name}:second_diff", r["second_diff"]), (r["eps"], f"{name}:fk_rescaled", r["fk_rescaled"])]
        rig = out["rigid"]["rows"]
        bounded = max(r["second_diff"] for r in rig) <= 1e-6 and max(r["fk_rescaled"] for r in rig) <= 1e-6
        growth = out["twist"]["second_diff_growth"]
        ok = bounded and all(g >= 1.5 for g in growth)
        detail = (
            f"constant rotation: second diff <= {_e(max(r['second_diff'] for r in rig))}, "
            f"rescaled modulus <= {_e(max(r['fk_rescaled'] for r in rig))}; twist growth {', '.join(f'{g:.3f}' for g in growth)}"
        )
        return Outcome(10, ok, detail, rows)

    def criterion_11(self) -> Outcome:
        rng = np.random.default_rng(self.config.seed)
        F = rng.normal(size=(100, 3, 3))
        F[np.linalg.det(F) < 0, :, 0] *= -1
        brute = brute_force_dist(F)
        gap = float(np.max(np.abs(brute - dist_SO3(F))))
        return Outcome(11, gap <= 2e-2, f"max |dist - grid minimum| {_e(gap)} (need <= 2e-2)", [(0.0, "max_gap", gap)])

    def run(self, criteria=None) -> list[Outcome]:
        return [getattr(self, f"criterion_{c}")() for c in (criteria or self.config.criteria) if c != 12]


def brute_force_dist(F: np.ndarray, n: int = 13, rounds: int = 12) -> np.ndarray:
    """``min_R |F - R|`` over a rotation-vector grid, refined around the best node."""
    from scipy.spatial.transform import Rotation

    F = np.asarray(F, dtype=float)
    ax = np.linspace(-math.pi, math.pi, n)
    grid = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = grid[np.linalg.norm(grid, axis=-1) <= math.pi + 1e-12]
    out = np.empty(len(F))
    for i, f in enumerate(F):
        pts, step = grid, ax[1] - ax[0]
        best_v, best_d = None, math.inf
        for _ in range(rounds):
            R = Rotation.from_rotvec(pts).as_matrix()
            d = np.linalg.norm(R - f, axis=(-2, -1))
            k = int(np.argmin(d))
            if d[k] < best_d:
                best_d, best_v = float(d[k]), pts[k]
            local = np.linspace(-step, step, 5)
            pts = best_v + np.stack(np.meshgrid(local, local, local, indexing="ij"), axis=-1).reshape(-1, 3)
            step /= 2
        out[i] = best_d
    return out


def run_verify(config: VerifyConfig = VerifyConfig()) -> ConvergenceReport:
    """All requested criteria; criterion 12 repeats the run and compares report bytes."""
    report = _single_run(config)
    if 12 in config.criteria:
        if config.repeat:
            again = _single_run(config)
            same = _report_bytes(report) == _report_bytes(again)
            report.verdict(12, same, "two runs byte-identical" if same else "reports differ between runs")
        else:
            report.verdict(12, False, "not run (repeat disabled)")
    return report


def _single_run(config: VerifyConfig) -> ConvergenceReport:
    report = ConvergenceReport()
    for out in Verifier(config).run():
        for eps, metric, value in out.rows:
            report.add(eps, f"c{out.criterion}:{metric}", value)
        report.verdict(out.criterion, out.passed, out.detail)
    return report


def _report_bytes(report: ConvergenceReport) -> bytes:
    return (report.verdicts_csv() + report.rows_csv()).encode()


def summary_lines(report: ConvergenceReport) -> list[str]:
    return [f"criterion {c:>2} {TITLES[int(c)]}: {'PASS' if ok else 'FAIL'} ({detail})" for c, ok, detail in report.verdicts]


def config_dict(config: VerifyConfig) -> dict:
    d = asdict(config)
    d["criteria"] = list(d["criteria"])
    return d
