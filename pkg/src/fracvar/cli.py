"""Command-line interface.

Exit codes: 0 on success, 1 when a verification check or negative-control
assertion fails, 2 on configuration or argument errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import approx, bvops, cells, fracops, lab, specfun
from .grid import LabelSet, load_label_field


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except lab.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _build_parser():
    p = argparse.ArgumentParser(prog="fracvar")
    sub = p.add_subparsers(dest="command")
    p.set_defaults(command=None)

    c = sub.add_parser("constants", help="fractional-calculus constants as CSV")
    c.add_argument("--n", type=int, default=2)
    c.add_argument("--s", type=float, default=0.5)
    c.set_defaults(func=cmd_constants)

    v = sub.add_parser("verify-operators", help="identity and estimate suite")
    v.add_argument("--config", default=None)
    v.add_argument("--grid", type=int, default=None)
    v.add_argument("--s", type=float, default=None, help="unused; kept for scripts")
    v.add_argument(
        "--suite",
        default="all",
        choices=["all", "dual", "leibniz", "estimates", "crosspath"],
    )
    v.add_argument("--corrupt-mu", action="store_true", help="negative control")
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("variation", help="fractional variation of a label field")
    w.add_argument("--input", required=True, help="label-field file")
    w.add_argument("--s", type=float, required=True)
    w.add_argument("--domain", choices=["mask", "rn"], default="rn")
    w.set_defaults(func=cmd_variation)

    q = sub.add_parser("quantize", help="coarea quantizer")
    q.add_argument("--input", required=True, help="label-field file read as levels")
    q.add_argument("--labels", required=True, help="comma-separated label values")
    q.add_argument("--eps", type=float, required=True)
    q.set_defaults(func=cmd_quantize)

    ce = sub.add_parser("cell", help="solve one cell problem")
    ce.add_argument("--nu", type=float, required=True, help="normal angle in degrees")
    ce.add_argument("--r", type=float, default=1.0)
    ce.add_argument("--pair", default="0,1")
    ce.add_argument("--density", choices=["homogeneous", "laminate", "checkerboard"],
                    default="homogeneous")
    ce.add_argument("--resolution", type=int, default=64)
    ce.set_defaults(func=cmd_cell)

    h = sub.add_parser("homogenize", help="surface tension over growing cubes")
    h.add_argument("--t-list", default="4,8,16")
    h.add_argument("--nu", type=float, default=90.0)
    h.add_argument("--density", choices=["laminate", "checkerboard"], default="laminate")
    h.add_argument("--out", default=None)
    h.set_defaults(func=cmd_homogenize)

    g = sub.add_parser("gamma-sweep", help="recovery-sequence energy sweep")
    g.add_argument("--config", default=None)
    g.add_argument("--density", choices=["homogeneous", "laminate"], default=None)
    g.add_argument("--negative-control", action="store_true")
    g.add_argument("--out", default=None)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gamma)

    s = sub.add_parser("perimeter-sweep", help="fractional perimeter limit")
    s.add_argument("--config", default=None)
    s.add_argument("--shape", choices=["ball", "square", "annulus"], default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_perimeter)

    d = sub.add_parser("decompose", help="condition-(A) decomposition")
    d.add_argument("--delta", type=float, required=True)
    d.add_argument("--smooth", type=float, default=0.25)
    d.set_defaults(func=cmd_decompose)

    sc = sub.add_parser("schedule", help="compatibility schedule diagnostics")
    sc.add_argument("--eps-list", required=True)
    sc.add_argument("--policy", default="adaptive")
    sc.set_defaults(func=cmd_schedule)

    le = sub.add_parser("lemma55", help="mollification bound checks")
    le.add_argument("--alpha-list", default="0.5,0.1,0.02")
    le.add_argument("--eta", type=float, default=0.1)
    le.set_defaults(func=cmd_lemma)
    return p


def _load_cfg(args, **overrides):
    if getattr(args, "config", None):
        cfg = lab.ExperimentConfig.from_ini(args.config)
    else:
        cfg = lab.ExperimentConfig()
    for key, val in overrides.items():
        if val is not None:
            cfg = lab.ExperimentConfig(**{**cfg.__dict__, key: val})
    return cfg


def _emit(table, args, default_name):
    out = getattr(args, "out", None)
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, default_name + ".csv")
        table.to_csv(path)
        xs = table.column(table.columns[0])
        if all(isinstance(x, (int, float)) for x in xs) and len(xs) > 1:
            err = table.column("relative_error") if "relative_error" in table.columns else None
            if err:
                lab.write_svg_plot(
                    os.path.join(out, default_name + ".svg"),
                    xs,
                    {"relative_error": err},
                    title=default_name,
                    logy=True,
                )
        print(f"wrote {path}")
    else:
        for key in sorted(table.metadata):
            print(f"# {key}: {table.metadata[key]}")
        for flag in table.flags:
            print(f"# flag: {flag}")
        print(",".join(table.columns))
        for row in table.rows:
            print(",".join(lab._fmt(v) for v in row))


def cmd_constants(args) -> int:
    const = specfun.FracConstants(args.n, args.s)
    diag = const.limit_diagnostics()
    print("quantity,value")
    print(f"mu_s,{const.mu_s:.12g}")
    print(f"gamma_1_minus_s,{const.gamma_alpha(1.0 - args.s):.12g}")
    print(f"omega_n,{const.omega_n:.12g}")
    for key, val in diag.items():
        print(f"{key},{val:.12g}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load_cfg(args)
    if args.grid:
        scale = max(1.0, 256.0 / args.grid)
        cfg = lab.ExperimentConfig(
            **{**cfg.__dict__, "cells": args.grid, "tol_scale": scale}
        )
    if args.corrupt_mu:
        cfg = lab.ExperimentConfig(**{**cfg.__dict__, "fault_mu_scale": 0.99})
    checks = lab.run_verification_suite(cfg)
    wanted = {
        "all": None,
        "dual": {"duality"},
        "leibniz": {"leibniz", "leibniz-divergence"},
        "estimates": {"lp-estimate", "nl-estimate", "v1s-estimate", "constants-identity",
                      "constants-limits"},
        "crosspath": {"crosspath"},
    }[args.suite]
    if wanted is not None:
        checks = [c for c in checks if c.name in wanted]
    table = lab.suite_table(checks)
    _emit(table, args, "verify")
    failed = [c for c in checks if not c.passed]
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {c.name}: metric={c.metric:.6g} tol={c.tolerance:.6g} seed={c.seed}")
    return 1 if failed else 0


def cmd_variation(args) -> int:
    u = load_label_field(args.input)
    omega = None
    if args.domain == "mask":
        from .grid import full_mask

        omega = full_mask(u.grid)
    res = fracops.frac_variation(u, omega, args.s)
    print("quantity,value")
    print(f"total,{res.total_on_mask:.12g}")
    print(f"tail_estimate,{res.tail_estimate:.12g}")
    return 0


def cmd_quantize(args) -> int:
    u = load_label_field(args.input)
    labels = LabelSet(tuple(float(v) for v in args.labels.split(",")))
    w = u.to_scalar()
    res = bvops.coarea_quantize(w, labels, bvops.isotropic_density(), None, args.eps)
    print("quantity,value")
    print(f"energy_before,{res.energy_before:.12g}")
    print(f"energy_after,{res.energy_after:.12g}")
    print(f"energy_ratio,{res.energy_ratio:.12g}")
    for i, t in sorted(res.thresholds.items()):
        print(f"threshold_{i},{t:.12g}")
    ok = (1.0 - args.eps) * res.energy_after <= res.energy_before + 1e-9
    print(f"guarantee_holds,{int(ok)}")
    return 0 if ok else 1


def _density_by_name(name):
    if name == "homogeneous":
        return bvops.isotropic_density()
    if name == "laminate":
        return bvops.laminate_density(1.0, 3.0, period=1.0)
    return bvops.checkerboard_density(1.0, 3.0, period=1.0)


def cmd_cell(args) -> int:
    th = math.radians(args.nu)
    nu = (math.sin(th), math.cos(th))
    pair = tuple(float(v) for v in args.pair.split(","))
    spec = cells.CellProblemSpec(
        x=(0.0, 0.0), nu=nu, r=args.r, pair=pair,
        psi=_density_by_name(args.density), resolution=args.resolution,
    )
    sol = cells.solve_cell(spec)
    print("quantity,value")
    print(f"value,{sol.value:.12g}")
    print(f"normalized,{sol.normalized:.12g}")
    print(f"solver,{sol.solver}")
    return 0


def cmd_homogenize(args) -> int:
    ts = [float(v) for v in args.t_list.split(",")]
    th = math.radians(args.nu)
    nu = (math.sin(th), math.cos(th))
    est = cells.estimate_psi_hom(_density_by_name(args.density), (0.0, 1.0), nu, ts)
    table = lab.ConvergenceTable(
        ("t", "normalized"),
        metadata={
            "experiment": "homogenize",
            "extrapolated": f"{est.extrapolated:.12g}",
            "trend_ok": str(est.trend_ok),
            "reference_provenance": "growing-cube cell values, Richardson in 1/t",
        },
    )
    for t, v in est.samples:
        table.add(t, v)
    _emit(table, args, "homogenize")
    return 0


def cmd_gamma(args) -> int:
    overrides = {}
    if args.density:
        overrides["density_kind"] = args.density
        if args.density == "laminate":
            overrides["eps_policy"] = "one_over_k"
        else:
            overrides["eps_policy"] = "none"
    if args.negative_control:
        overrides.update(eps_policy="pow2", s_policy="naive", k_max=10)
    cfg = _load_cfg(args, **overrides, workers=args.workers)
    cfg = lab.ExperimentConfig(**{**cfg.__dict__, "kind": "gamma-sweep"})
    table = lab.run_gamma_sweep(cfg)
    _emit(table, args, "gamma_sweep")
    if args.negative_control:
        # The control must be flagged non-convergent.
        return 0 if table.flags else 1
    return 0


def cmd_perimeter(args) -> int:
    cfg = _load_cfg(args, shape=args.shape)
    table = lab.run_perimeter_sweep(cfg)
    _emit(table, args, "perimeter_sweep")
    return 0


def cmd_decompose(args) -> int:
    lam = bvops.laminate_density(1.0, 2.0, period=1.0, smooth=args.smooth)
    dec = approx.decompose_condition_A(lam, args.delta)
    print("quantity,value")
    print(f"n_terms,{dec.n_terms}")
    print(f"scan_error,{dec.scan_error:.12g}")
    print(f"delta,{dec.delta:.12g}")
    return 0


def cmd_schedule(args) -> int:
    eps = [float(v) for v in args.eps_list.split(",")]
    sch = approx.build_compatibility_schedule(eps, policy=args.policy)
    print("k,eps,s,diagnostic")
    for i, (e, s, d) in enumerate(zip(sch.eps_k, sch.s_k, sch.diagnostic), start=1):
        print(f"{i},{e:.12g},{s:.12g},{d:.12g}")
    print(f"# converges: {sch.converges}")
    print(f"# flagged: {list(sch.flagged)}")
    return 0


def cmd_lemma(args) -> int:
    alphas = [float(v) for v in args.alpha_list.split(",")]
    cfgl = approx.LemmaCheckConfig(n=1, resolution=16384)
    const_b = lambda pts: np.ones(np.asarray(pts).shape[0])
    print("alpha,lhs,rhs,holds")
    ok = True
    for a in alphas:
        rep = approx.mollification_bound_check(const_b, R=1.5, alpha=a, eta=args.eta,
                                               lemma_cfg=cfgl)
        ok &= rep["holds"]
        print(f"{a:.12g},{rep['lhs']:.12g},{rep['rhs']:.12g},{int(rep['holds'])}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
