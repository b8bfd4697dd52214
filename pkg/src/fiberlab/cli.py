"""Command-line front end: ``fiberlab <command> [options]``.

Exit codes: 0 success, 1 a checked property failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .approx_identity import ApproxIdentity, sup_deviation, verify_properties
from .geometry import Domain3, FiberLayout, parse_epsilon, rigid_volume_fraction, slope_bound
from .limit_deformations import LIFTS, PRESETS, default_domain, incompressibility, membership_A0, membership_B0, preset, to_rotation_form
from .reports import ConvergenceReport, export_mesh, write_csv
from .rigidity_analysis import (
    EnergyDensitySpec,
    Lemma31Config,
    energy,
    extract_rotations,
    fk_modulus,
    lemma31_minimize,
    lemma31_verify,
    perturbed_interpolant,
    sheared_interpolant,
)
from .sequence_builder import BendingSequence, bending_counterexample, build, convergence_error, perturb_beta, select_translation, sweep_rng
from .so3 import dist_SO3
from .verification import ALL_CRITERIA, ENERGY_QUAD, VerifyConfig, config_dict, run_verify, summary_lines

SCHEMA_VERSION = 1

# typed keys accepted in a --config file; they provide defaults for the flags
CONFIG_KEYS = {
    "schema_version": int,
    "seed": int,
    "p": float,
    "alpha": float,
    "delta": float,
    "center_mode": str,
    "eps": list,
    "preset": str,
    "lift": str,
    "criteria": list,
    "repeat": bool,
    "out": str,
}


class UsageError(Exception):
    pass


# -- argument types ------------------------------------------------------------------


def _eps(text: str) -> Fraction | float:
    try:
        eps = parse_epsilon(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"invalid epsilon {text!r}: {exc}") from None
    if not 0 < eps < 1:
        raise argparse.ArgumentTypeError(f"epsilon must lie in (0, 1), got {text!r}")
    return eps


def _eps_list(text: str) -> list:
    return [_eps(t) for t in str(text).split(",") if t.strip()]


def _floats(n: int | None = None):
    def parse(text: str) -> list[float]:
        try:
            vals = [float(Fraction(t)) for t in text.split(",")]
        except (ValueError, ZeroDivisionError):
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
        if n is not None and len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals

    return parse


def _criteria(text: str) -> list[int]:
    try:
        vals = sorted({int(t) for t in text.split(",")})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated criterion numbers, got {text!r}") from None
    bad = [v for v in vals if v not in ALL_CRITERIA]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown criteria {bad}; valid are 1..12")
    return vals


def _points(text: str) -> list[tuple[float, float]]:
    pts = []
    for part in text.split(";"):
        vals = _floats(2)(part)
        pts.append((vals[0], vals[1]))
    return pts


def _params(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = float(Fraction(val))
        except (ValueError, ZeroDivisionError):
            raise UsageError(f"--param {key}: not a number: {val!r}") from None
    return out


# -- config --------------------------------------------------------------------------


def load_config(path: str) -> dict:
    """Flat JSON document with ``schema_version``; unknown keys are errors."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: {path} is not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise UsageError("--config: top level must be an object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise UsageError(f"--config: unknown keys {unknown}")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise UsageError(f"--config: schema_version must be {SCHEMA_VERSION}")
    for key, typ in CONFIG_KEYS.items():
        if key in data:
            val = data[key]
            ok = isinstance(val, typ) and not (typ is int and isinstance(val, bool))
            if typ is float and isinstance(val, int) and not isinstance(val, bool):
                ok = True
            if not ok:
                raise UsageError(f"--config: key {key!r} must be of type {typ.__name__}")
    if "eps" in data:
        data["eps"] = [_eps(str(e)) for e in data["eps"]]
    if "criteria" in data:
        data["criteria"] = _criteria(",".join(str(c) for c in data["criteria"]))
    return data


def _apply_config(args) -> None:
    path = getattr(args, "config", None)
    if not path:
        return
    for key, val in load_config(path).items():
        if key == "schema_version":
            continue
        if getattr(args, key, None) is None:
            setattr(args, key, val)


# -- helpers -------------------------------------------------------------------------


def _domain(args, name: str | None = None) -> Domain3:
    if getattr(args, "domain", None) is None:
        dom = default_domain(name) if name else Domain3.box((0.0, 1.0), (0.0, 1.0), 1.0)
        if getattr(args, "L", None) is not None:
            dom = Domain3(dom.omega_min, dom.omega_max, args.L)
        return dom
    a, b, c, d = args.domain
    return Domain3.box((a, b), (c, d), args.L if args.L is not None else 1.0)


def _layout(args, eps) -> FiberLayout:
    try:
        return FiberLayout(
            eps,
            alpha=args.alpha if args.alpha is not None else 0.25,
            delta=args.delta if args.delta is not None else 0.4,
            center_mode=getattr(args, "center_mode", None) or "periodic",
            seed=args.seed if getattr(args, "seed", None) is not None else 0,
        )
    except ValueError as exc:
        raise UsageError(f"--alpha/--delta: {exc}") from None


def _emit(args, name: str, text: str) -> None:
    """Write ``text`` to ``<out>/<name>`` or print it."""
    out = getattr(args, "out", None)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text)
    else:
        sys.stdout.write(text)


def _preset(args, name: str, domain: Domain3):
    try:
        return preset(name, domain, **_params(getattr(args, "param", None)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _eps_str(e) -> str:
    return str(e) if isinstance(e, Fraction) else repr(e)


# -- commands ------------------------------------------------------------------------


def cmd_geometry(args) -> int:
    dom = _domain(args)
    layout = _layout(args, args.eps)
    info = {
        "layout": layout.to_dict(),
        "domain": dom.to_dict(),
        "interior_cells": int(len(layout.interior_cells(dom))),
        "rigid_volume_fraction": rigid_volume_fraction(layout, dom),
        "cross_section_fraction": layout.cross_section_area() / layout.eps**2,
        "slope_bound": slope_bound(layout).bound,
        "slope_realized": slope_bound(layout).realized,
    }
    _emit(args, "geometry.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_phi_report(args) -> int:
    dom = _domain(args)
    eps_list = args.eps or _eps_list("1/8,1/16,1/32,1/64,1/128")
    report = ConvergenceReport()
    ok = True
    for eps in eps_list:
        layout = _layout(args, eps)
        ident = ApproxIdentity.for_layout(layout, dom)
        props = verify_properties(ident, layout, dom, seed=args.seed or 0)
        report.add(layout.eps, "grad_sup", props["i"]["sup_norm"])
        report.add(layout.eps, "sup_deviation", sup_deviation(ident, dom.cross_section))
        report.add(layout.eps, "fibers_constant", float(props["ii"]["pass"]))
        report.add(layout.eps, "images_disjoint", float(props["iii"]["pass"]))
        ok = ok and all(props[k]["pass"] for k in ("i", "ii", "iii", "iv"))
    fit = report.fit("sup_deviation")
    if fit is not None:
        ok = ok and abs(fit[0] - 1.0) <= 0.1
    report.verdict("phi", ok, f"uniform slope {fit[0]:.3f}" if fit else "fewer than 3 scales, no slope")
    _emit(args, "phi_report.csv", report.rows_csv())
    _emit(args, "phi_fits.csv", report.fits_csv())
    return 0 if ok else 1


def cmd_demo(args) -> int:
    dom = _domain(args, args.preset)
    df = _preset(args, args.preset, dom)
    u = df.deformation()
    inc = incompressibility(df)
    b0 = membership_B0(u)
    a0 = membership_A0(u)
    lines = [
        f"preset {args.preset} on {dom.cross_section} x (0, {dom.L})",
        f"det residual {inc['det_residual']:.3e}, parallel residual {inc['parallel_residual']:.3e}",
        f"A0 {'pass' if a0['pass'] else 'fail'}, B0 {'pass' if b0['pass'] else 'fail'}",
    ]
    print("\n".join(lines))
    if args.export:
        fibers = args.fibers if args.fibers else None
        _write_mesh(args, u, dom, f"{args.preset}.{args.export}", fibers)
    return 0


def _write_mesh(args, u, dom, default_name: str, fibers) -> None:
    res = args.resolution
    path = Path(args.file) if getattr(args, "file", None) else Path(args.out or ".") / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = path.suffix.lstrip(".") if getattr(args, "file", None) else default_name.rsplit(".", 1)[1]
    try:
        export_mesh(u, dom, res, fmt, path, fibers=fibers, fiber_points=args.fiber_points)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None
    print(f"wrote {path}")


def cmd_approximate(args) -> int:
    name = args.preset
    dom = _domain(args, name)
    df = _preset(args, name, dom)
    rf = to_rotation_form(df, lift=args.lift or "R")
    p = args.p if args.p is not None else 4.0
    seed = args.seed or 0
    report = ConvergenceReport()
    u = layout = None
    for eps in args.eps:
        layout = _layout(args, eps)
        a = (0.0, 0.0)
        if args.translations:
            choice = select_translation(rf, layout, p=p, M=args.translations, seed=seed, domain=dom)
            a = tuple(float(v) for v in choice.a)
            report.add(layout.eps, "grad_Lp", choice.norm)
            report.add(layout.eps, "grad_Lp_mean", choice.mean_norm)
        u = build(rf, layout, a=a, domain=dom)
        if args.translations:
            report.add(layout.eps, "Lp_error_shifted", convergence_error(u, df.deformation(), p, layout, dom))
            u0 = build(rf, layout, domain=dom)
        else:
            u0 = u
        rng = sweep_rng(seed, layout.epsilon)
        cells = layout.interior_cells(dom)
        pick = cells[rng.integers(len(cells), size=4096)]
        lo, hi = layout.square_bounds(pick)
        xp = lo + (hi - lo) * rng.uniform(1e-9, 1 - 1e-9, size=(4096, 2))
        G = u.gradient(np.c_[xp, rng.uniform(0, dom.L, 4096)])
        report.add(layout.eps, "max_rigid_dist", float(np.max(dist_SO3(G))))
        report.add(layout.eps, "Lp_error", convergence_error(u0, df.deformation(), p, layout, dom))
    rigid_ok = max(v for _, v in report.series("max_rigid_dist")) <= 1e-10
    report.verdict("rigid_membership", rigid_ok, f"max dist {max(v for _, v in report.series('max_rigid_dist')):.3e}")
    # the rate is judged on the unshifted sequence; random shifts add O(eps) noise
    errs = report.series("Lp_error")
    fit = report.fit("Lp_error")
    conv_ok = all(b[1] < a[1] for a, b in zip(errs, errs[1:])) and (fit is None or fit[0] >= 0.9)
    report.verdict("convergence", conv_ok, f"slope {fit[0]:.3f}" if fit else "fewer than 3 scales, no slope")
    ok = rigid_ok and conv_ok
    if args.translations:
        norms = [v for _, v in report.series("grad_Lp")]
        spread = max(norms) / min(norms)
        report.verdict("gradient_bound", spread <= 1.5, f"max/min {spread:.3f}")
        ok = ok and spread <= 1.5
    _emit(args, "approximate.csv", report.rows_csv())
    _emit(args, "approximate_fits.csv", report.fits_csv())
    _emit(args, "approximate_verdicts.csv", report.verdicts_csv())
    for crit, passed, detail in report.verdicts:
        print(f"approximate {name} {crit}: {detail} -> {'pass' if passed else 'fail'}", file=sys.stderr)
    if args.export:
        _write_mesh(args, u, dom, f"{name}_eps{layout.eps:.6g}.{args.export}", args.fibers)
    return 0 if ok else 1


def cmd_converge(args) -> int:
    name = args.preset or "twist"
    dom = _domain(args, name)
    df = _preset(args, name, dom)
    rf = to_rotation_form(df, lift=args.lift or "R")
    p = args.p if args.p is not None else 4.0
    report = ConvergenceReport()
    for eps in args.eps or _eps_list("1/8,1/16,1/32"):
        layout = _layout(args, eps)
        u = build(rf, layout, domain=dom)
        report.add(layout.eps, "Lp_error", convergence_error(u, df.deformation(), p, layout, dom))
    errs = report.series("Lp_error")
    decreasing = all(b[1] < a[1] for a, b in zip(errs, errs[1:]))
    fit = report.fit("Lp_error")
    ok = decreasing and (fit is None or fit[0] >= 0.9)
    detail = f"slope {fit[0]:.3f}" if fit else "fewer than 3 scales, no slope"
    report.verdict("converge", ok, detail + ("" if decreasing else ", not decreasing"))
    _emit(args, "converge.csv", report.rows_csv())
    _emit(args, "converge_fits.csv", report.fits_csv())
    print(f"converge {name}: {detail} -> {'pass' if ok else 'fail'}", file=sys.stderr)
    return 0 if ok else 1


def cmd_verify(args) -> int:
    config = VerifyConfig(
        seed=args.seed if args.seed is not None else 0,
        p=args.p if args.p is not None else 4.0,
        alpha=args.alpha if args.alpha is not None else 0.25,
        delta=args.delta if args.delta is not None else 0.4,
        criteria=tuple(args.criteria) if args.criteria else ALL_CRITERIA,
        repeat=args.repeat if args.repeat is not None else True,
    )
    report = run_verify(config)
    for line in summary_lines(report):
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_verdicts.csv").write_text(report.verdicts_csv())
        (out / "verify_rows.csv").write_text(report.rows_csv())
        (out / "verify_config.json").write_text(json.dumps(config_dict(config), indent=2, sort_keys=True) + "\n")
    return 0 if all(v[1] for v in report.verdicts) else 1


def cmd_counterexample(args) -> int:
    p = args.p if args.p is not None else 4.0
    report = ConvergenceReport()
    fk_rows = []
    if args.kind == "bending":
        dom = _domain(args)
        eps_list = args.eps or _eps_list("1/8,1/16,1/32,1/64,1/128")
        u = None
        for eps in eps_list:
            layout = _layout(args, eps)
            bs = BendingSequence(args.rho, layout.eps, alpha=layout.alpha, L=dom.L)
            ue, u = bending_counterexample(bs, dom)
            en = energy(ue, layout, EnergyDensitySpec(diagnostic_p=p), dom, soft=False)
            report.add(layout.eps, "rigid_dist_p", en["rigid_dist_p"])
            report.add(layout.eps, "max_rigid_dist", en["max_rigid_dist"])
        fit = report.fit("rigid_dist_p")
        a0 = membership_A0(u, domain=dom)
        ok = (fit is None or abs(fit[0] - p) <= 0.15) and not a0["pass"]
        detail = f"energy slope {fit[0]:.3f}" if fit else "no slope"
        detail += f", limit x3-dependence {a0['x3_dependence']:.3f}"
    else:
        name = args.preset or "twist"
        if name == "twist" and args.domain is None:
            # a square cross-section leaves room for the translation shifts
            dom = Domain3.box((0.0, 4.0), (0.0, 4.0), args.L or 1.0)
        else:
            dom = _domain(args, name)
        rf = to_rotation_form(_preset(args, name, dom), lift=args.lift or "R")
        beta = args.beta if args.beta is not None else 3 * p
        region = args.region or _centre_region(dom)
        for eps in args.eps or _eps_list("1/8,1/16,1/32"):
            layout = _layout(args, eps)
            u = perturb_beta(build(rf, layout, domain=dom), beta, p, layout.eps)
            en = energy(u, layout, EnergyDensitySpec(diagnostic_p=p), dom, quad=ENERGY_QUAD, soft=False)
            report.add(layout.eps, "rigid_dist_p", en["rigid_dist_p"])
            e = layout.eps
            reach = 5 * e
            window = tuple((lo - reach, hi + reach) for lo, hi in region)
            try:
                prf = extract_rotations(u, layout, dom, window=window)
                xi = [t * e * np.asarray(d) for t in (1, 2, 4) for d in ((1.0, 0.0), (0.0, 1.0), (math.sqrt(0.5), math.sqrt(0.5)))]
                fk = fk_modulus(prf, xi, p, region, omega=dom.cross_section)
            except ValueError as exc:
                raise UsageError(f"--region: {exc}") from None
            report.add(e, "fitted_C", fk.C)
            fk_rows += [(e, r.xi, r.value, fk.C, r.slack) for r in fk.rows]
        fit = report.fit("rigid_dist_p")
        ok = fit is None or fit[0] >= beta - 0.3
        detail = f"beta {beta:g}, energy slope {fit[0]:.3f}" if fit else f"beta {beta:g}, no slope"
    report.verdict(args.kind, ok, detail)
    _emit(args, f"counterexample_{args.kind}.csv", report.rows_csv())
    if fk_rows:
        _emit(args, "fk.csv", write_csv(("eps", "xi", "value", "fitted_C", "slack"), fk_rows))
    print(f"counterexample {args.kind}: {detail} -> {'pass' if ok else 'fail'}", file=sys.stderr)
    return 0 if ok else 1


def _centre_region(dom: Domain3):
    (a, b), (c, d) = dom.cross_section
    return ((a + 0.3125 * (b - a), b - 0.3125 * (b - a)), (c + 0.3125 * (d - c), d - 0.3125 * (d - c)))


def cmd_lemma31(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    rows = []
    worst = math.inf
    for case in range(args.cases):
        cfg = Lemma31Config.random(rng, p=args.p, m=args.m, optimal=args.optimal, L=args.L)
        for j in range(args.fields):
            v = sheared_interpolant(cfg) if j == 0 else perturbed_interpolant(cfg, rng)
            res = lemma31_verify(v, cfg)
            rows.append((f"{case}-{j}", res["lhs"], res["rhs"], res["ratio"]))
            worst = min(worst, res["ratio"])
        if args.minimize:
            res = lemma31_minimize(cfg)
            rows.append((f"{case}-min", res["lhs"], res["rhs"], res["ratio"]))
    _emit(args, "lemma31.csv", write_csv(("case", "lhs", "rhs", "ratio"), rows))
    ok = worst >= 1.0 - 1e-9
    print(f"lemma31: smallest lhs/rhs {worst:.6f} -> {'pass' if ok else 'fail'}", file=sys.stderr)
    return 0 if ok else 1


def cmd_export_mesh(args) -> int:
    name = args.preset
    dom = _domain(args, name)
    df = _preset(args, name, dom)
    u = df.deformation()
    if args.eps is not None:
        u = build(to_rotation_form(df, lift=args.lift or "R"), _layout(args, args.eps), domain=dom)
    fmt = args.format
    _write_mesh(args, u, dom, f"{name}.{fmt}", args.fibers)
    return 0


# -- parser --------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, eps_list: bool = False, eps: bool = False) -> None:
    p.add_argument("--config", help="JSON config file (schema_version 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None, help="kink half-width of the identity approximation")
    p.add_argument("--delta", type=float, default=None, help="fiber cross-section side relative to eps")
    p.add_argument("--domain", type=_floats(4), default=None, help="a,b,c,d for omega=(a,b)x(c,d)")
    p.add_argument("--L", type=float, default=None, help="body height")
    p.add_argument("--out", default=None, help="output directory (default: stdout)")
    if eps_list:
        p.add_argument("--eps", type=_eps_list, default=None, help="comma-separated scales such as 1/8,1/16")
    if eps:
        p.add_argument("--eps", type=_eps, default=None, help="scale such as 1/16")


def _mesh_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--resolution", type=int, default=9, help="grid points per axis on the boundary surface")
    p.add_argument("--fibers", type=_points, default=None, help="fiber lines as 'x1,x2;x1,x2'")
    p.add_argument("--fiber-points", type=int, default=9)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiberlab", description="Fiber-reinforced composites: constructions and rigidity diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geometry", help="layout summary")
    _common(p, eps=True)
    p.add_argument("--center-mode", choices=("periodic", "jittered"), default=None)
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("phi-report", help="properties of the identity approximation")
    _common(p, eps_list=True)
    p.set_defaults(func=cmd_phi_report)

    p = sub.add_parser("demo", help="gallery deformation diagnostics and mesh")
    p.add_argument("preset", choices=PRESETS)
    _common(p)
    p.add_argument("--param", action="append", help="preset parameter key=value")
    p.add_argument("--export", choices=("obj", "vtk"), default=None)
    _mesh_flags(p)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("approximate", help="build the approximating deformations along an eps sweep")
    _common(p, eps_list=True)
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--param", action="append")
    p.add_argument("--lift", choices=sorted(LIFTS), default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--translations", type=int, default=0, help="sample this many shifts per eps and keep the one with the smallest gradient norm")
    p.add_argument("--export", choices=("obj", "vtk"), default=None, help="mesh of the finest eps")
    _mesh_flags(p)
    p.set_defaults(func=cmd_approximate)

    p = sub.add_parser("converge", help="L^p error along an eps sweep")
    _common(p, eps_list=True)
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--param", action="append")
    p.add_argument("--lift", choices=sorted(LIFTS), default=None)
    p.add_argument("--p", type=float, default=None)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("verify", help="run the acceptance criteria")
    _common(p)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--criteria", type=_criteria, default=None, help="subset such as 1,3,12")
    p.add_argument("--no-repeat", dest="repeat", action="store_const", const=False, default=None, help="skip the second run used by criterion 12")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("counterexample", help="bending or approximate-inclusion sequences")
    p.add_argument("kind", choices=("bending", "beta"))
    _common(p, eps_list=True)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--preset", choices=PRESETS, default=None)
    p.add_argument("--param", action="append")
    p.add_argument("--lift", choices=sorted(LIFTS), default=None)
    p.add_argument("--region", type=lambda t: (lambda v: ((v[0], v[1]), (v[2], v[3])))(_floats(4)(t)), default=None)
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("lemma31", help="lower bound for switching between affine maps")
    p.add_argument("--config", help="JSON config file (schema_version 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--m", type=float, default=None, help="slant of the prism")
    p.add_argument("--L", type=_floats(3), default=None, help="side lengths L1,L2,L3")
    p.add_argument("--cases", type=int, default=1)
    p.add_argument("--fields", type=int, default=20, help="admissible fields per case")
    p.add_argument("--optimal", action="store_true", help="use traces for which the bound is attained")
    p.add_argument("--minimize", action="store_true", help="also run the grid minimiser")
    p.set_defaults(func=cmd_lemma31)

    p = sub.add_parser("export-mesh", help="deformed boundary surface as OBJ or VTK")
    p.add_argument("preset", choices=PRESETS)
    _common(p, eps=True)
    p.add_argument("--param", action="append")
    p.add_argument("--lift", choices=sorted(LIFTS), default=None)
    p.add_argument("--format", choices=("obj", "vtk"), default="obj")
    p.add_argument("--file", default=None, help="output file (default: <out>/<preset>.<format>)")
    _mesh_flags(p)
    p.set_defaults(func=cmd_export_mesh)
    return parser


def _validate(args) -> None:
    if args.command in ("geometry", "approximate") and args.eps is None:
        raise UsageError("--eps is required")
    if args.command == "approximate" and args.translations < 0:
        raise UsageError("--translations must be non-negative")
    if getattr(args, "resolution", 2) < 2:
        raise UsageError("--resolution must be at least 2")
    if getattr(args, "fiber_points", 2) < 2:
        raise UsageError("--fiber-points must be at least 2")
    if args.command == "lemma31":
        if args.cases < 1 or args.fields < 1:
            raise UsageError("--cases and --fields must be positive")
        if args.p is not None and args.p < 1:
            raise UsageError("--p must be at least 1")
        if args.L is not None and min(args.L) <= 0:
            raise UsageError("--L side lengths must be positive")
    if getattr(args, "p", None) is not None and args.p < 1:
        raise UsageError("--p must be at least 1")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(args)
        if isinstance(getattr(args, "eps", None), list) and args.command in ("geometry", "export-mesh"):
            args.eps = args.eps[0]
        _validate(args)
        return args.func(args)
    except UsageError as exc:
        print(f"fiberlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
