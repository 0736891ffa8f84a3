"""``epduct`` command line: background, weight, solve-linear, solve, verify, sweep.

Exit codes
  0  success
  2  configuration error
  3  background truncated before the requested length (sonic approach)
  4  no feasible energy weight on the requested duct length
  5  Picard iteration did not contract (or left the iteration set)
  6  verification failure
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRUNCATED = 3
EXIT_INFEASIBLE = 4
EXIT_NONCONTRACTION = 5
EXIT_VERIFY = 6

THREADS_ENV = "EPDUCT_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_threads(n):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be >= 1")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)
    return n


# -- pipeline pieces -----------------------------------------------------

def build_background(cfg: RunConfig):
    from .background import BackgroundParams, integrate
    from .gas import GasLaw
    try:
        params = BackgroundParams(GasLaw(cfg["gas.gamma"], cfg["gas.j0"]), cfg["background.b0"],
                                  cfg["background.u0"], cfg["background.e0"], cfg["background.delta"],
                                  cfg["background.length"])
        return integrate(params, cfg["background.step"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_grid(cfg: RunConfig, bg, n1=None):
    from .grid import DuctGrid
    length = cfg.duct_length
    if length is None:
        length = 0.25 * bg.l1_detected
    if length > bg.l1_detected * (1 + 1e-12):
        raise ConfigError(f"grid.length = {length} exceeds the background length L1 = {bg.l1_detected:.6g}")
    return DuctGrid(n1 or cfg["grid.n1"], cfg["grid.n2"], cfg["grid.n3"], float(length))


def build_data(cfg: RunConfig, bg, grid, sigma_target=None):
    from .boundary import background_traces, generate_synthetic, load_boundary_data, sigma
    if cfg["data.source"] == "file":
        return load_boundary_data(cfg["data.manifest"], bg, grid)
    target = cfg["data.sigma"] if sigma_target is None else sigma_target
    if target == 0.0 or not cfg["data.modes"]:
        return background_traces(bg, grid)
    try:
        data = generate_synthetic(list(cfg["data.modes"]), bg, grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if target is not None:
        s = sigma(data).sigma
        data = data.scaled(target / s)
    return data


def iteration_config(cfg: RunConfig):
    from .nonlinear import IterationConfig
    s = cfg.section("solver")
    return IterationConfig(epsilon=s["epsilon"], sigma_bar=s["sigma_bar"], max_iter=s["max_iter"],
                           contraction_tol=s["contraction_tol"], residual_tol=s["residual_tol"],
                           under_relaxation=s["under_relaxation"], r_factor=s["r_factor"], m_max=s["m_max"])


def _weight(cfg: RunConfig, bg, length):
    from .energy import synthesize_weight
    w = cfg.section("weight")
    return synthesize_weight(bg, length, n=w["n"], safety=w["safety"], floor=w["floor"],
                             min_margin=w["min_margin"])


def _dump_fields(out: Path, grid, named: dict):
    from .boundary import write_field_csv
    coords = {"x1": grid.x1, "x2": grid.x2, "x3": grid.x3}
    for name, arr in named.items():
        write_field_csv(out / f"{name}.csv", coords, arr)


def _versions():
    import numpy
    import scipy
    from . import __version__
    return {"epduct": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


# -- commands --------------------------------------------------------------

def cmd_background(cfg: RunConfig, out: Path) -> int:
    from .background import classify_orbit
    from .files import write_json, write_table
    t0 = time.perf_counter()
    bg = build_background(cfg)
    write_table(out / "background.csv", ["x1", "u", "E", "rho", "phi0", "Phi0"],
                [bg.x1_grid, bg.u, bg.e, bg.rho, bg.phi0, bg.cap_phi0])
    summary = {"L1": bg.l1_detected, "invariant_drift": bg.invariant_drift,
               "orbit_class": classify_orbit(bg.params).value, "truncated": bg.truncated,
               "length_requested": bg.params.length_request, "lift_error": bg.lift_error(),
               "timings": {"total": time.perf_counter() - t0}}
    write_json(out / "background.json", summary)
    if bg.truncated:
        print(f"background truncated at L1 = {bg.l1_detected:.6g} < {bg.params.length_request}", file=sys.stderr)
        return EXIT_TRUNCATED
    return EXIT_OK


def cmd_weight(cfg: RunConfig, out: Path) -> int:
    from .energy import length_sweep, reaudit
    from .files import write_json, write_table
    bg = build_background(cfg)
    grid = build_grid(cfg, bg)
    wt = _weight(cfg, bg, grid.length)
    write_table(out / "weight.csv", ["x1", "w", "dw", "margin1", "margin2", "margin3"],
                [wt.x1, wt.w, wt.dw, *wt.margins])
    fine = reaudit(wt, bg) if wt.feasible else None
    summary = {"length": grid.length, "feasible": wt.feasible, "feasible_length": wt.feasible_length,
               "min_margins": wt.min_margins(min(grid.length, wt.x1[-1])),
               "reaudit_min": None if fine is None else fine.min(axis=1), "kappa": wt.kappa,
               "policy": wt.policy}
    if cfg["weight.sweep"]:
        w = cfg.section("weight")
        rows = length_sweep(bg, cfg["weight.sweep"], n=w["n"], safety=w["safety"], floor=w["floor"],
                            min_margin=w["min_margin"])
        write_table(out / "weight_sweep.csv", ["L", "feasible", "feasible_length", "min_margin"],
                    [[r[k] for r in rows] for k in ("L", "feasible", "feasible_length", "min_margin")])
        summary["sweep"] = rows
    write_json(out / "weight.json", summary)
    return EXIT_OK if wt.feasible else EXIT_INFEASIBLE


def cmd_solve_linear(cfg: RunConfig, out: Path) -> int:
    """One linear solve with coefficients frozen at the background."""
    from dataclasses import replace
    from .boundary import homogenize_psi
    from .coefficients import base, coefficient_set
    from .files import write_json
    from .linear import LinearProblem, solve
    from .spectral import CrossSectionBasis
    bg = build_background(cfg)
    grid = build_grid(cfg, bg)
    data = build_data(cfg, bg, grid)
    basis = CrossSectionBasis(cfg["solver.m_max"], grid.n2, grid.n3)
    bc = base(bg, grid.x1)
    shift = homogenize_psi(data, basis, bc)
    cs = coefficient_set(bc, None, grid.shape, f1=shift.df1, f2=shift.df2 - data.db)
    cs = replace(cs, provenance={"base_only": True, "source": "boundary data"})
    problem = LinearProblem(grid, basis, cs, data.g1)
    sol = solve(problem)
    sol.cap_theta = sol.cap_theta + shift.modes
    if cfg["output.fields"]:
        _dump_fields(out, grid, {"psi": sol.psi, "Psi": sol.cap_psi})
    write_json(out / "linear.json", {"info": sol.info, "residual": sol.residuals,
                                     "h1_norms": sol.h1_norms(), "config": cfg.echo()})
    return EXIT_OK


def _solve_one(cfg: RunConfig, bg, grid, data, out: Path | None, log_name="iterations.jsonl"):
    from .nonlinear import solve_nonlinear
    ic = iteration_config(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / log_name, "w") as log:
            return solve_nonlinear(data, bg, ic, log=log)
    return solve_nonlinear(data, bg, ic)


def _verified(rep, ic) -> bool:
    return rep.residual["l2"] <= ic.residual_tol and rep.regime_margin > 0


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    from .boundary import sigma
    from .files import write_json
    if cfg["data.sweep"]:
        return cmd_sweep(cfg, out)
    bg = build_background(cfg)
    grid = build_grid(cfg, bg)
    data = build_data(cfg, bg, grid)
    psi, cap, rep, _ = _solve_one(cfg, bg, grid, data, out)
    ic = iteration_config(cfg)
    if cfg["output.fields"]:
        _dump_fields(out, grid, {"psi": psi, "Psi": cap})
    manifest = {"config": cfg.echo(), "versions": _versions(), "timings": rep.timings,
                "summary": {"L1": bg.l1_detected, "L1_star": rep.weight_feasible_length,
                            "length": grid.length, "sigma": sigma(data).as_dict(),
                            "iterations": rep.iterations, "q": rep.q, "residual": rep.residual,
                            "conservative": rep.conservative, "regime_margin": rep.regime_margin,
                            "ratio": rep.ratio, "norms": rep.norms,
                            "fixed_point_move": rep.fixed_point_move, "norm_proxy": rep.norm_proxy}}
    write_json(out / "manifest.json", manifest)
    return EXIT_OK if _verified(rep, ic) else EXIT_VERIFY


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    """sigma sweep on the synthetic modes; writes the scaling table."""
    from .files import write_json, write_table
    sig = cfg["data.sweep"] or tuple(f * cfg["solver.sigma_bar"] for f in (1e-2, 1e-3, 1e-4))
    bg = build_background(cfg)
    grid = build_grid(cfg, bg)
    ic = iteration_config(cfg)
    rows = []
    ok = True
    for i, s in enumerate(sig):
        data = build_data(cfg, bg, grid, sigma_target=s)
        _, _, rep, _ = _solve_one(cfg, bg, grid, data, out, log_name=f"iterations_{i}.jsonl")
        ok &= _verified(rep, ic)
        rows.append({"sigma": s, "iterations": rep.iterations, "q": rep.q, "residual": rep.residual["l2"],
                     "regime_margin": rep.regime_margin, "ratio": rep.ratio})
    keys = ["sigma", "iterations", "q", "residual", "regime_margin", "ratio"]
    write_table(out / "sweep.csv", keys, [[r[k] for r in rows] for k in keys])
    ratios = [r["ratio"] for r in rows if r["sigma"] > 0]
    spread = (max(ratios) - min(ratios)) / min(ratios) if len(ratios) > 1 else 0.0
    write_json(out / "sweep.json", {"rows": rows, "ratio_spread": spread, "config": cfg.echo(),
                                    "versions": _versions()})
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_verify(cfg: RunConfig, out: Path, refine: bool = False) -> int:
    """MMS convergence, energy identity, coefficient audit and data compatibility."""
    import numpy as np
    from .boundary import validate_compatibility
    from .coefficients import Perturbation, audit, audit_passed, base, coefficient_set
    from .energy import energy_identity
    from .files import write_json, write_table
    from .linear import convergence_study, residual, solve
    from .mms import manufactured_problem
    from .spectral import CrossSectionBasis
    bg = build_background(cfg)
    grid0 = build_grid(cfg, bg)
    checks = {}

    data = build_data(cfg, bg, grid0)
    comp = validate_compatibility(data)
    checks["compatibility"] = {"passed": comp.passed, "residuals": comp.residuals, "tol": comp.tol}

    basis = CrossSectionBasis(cfg["solver.m_max"], grid0.n2, grid0.n3)
    bc0 = base(bg, grid0.x1)
    th = np.zeros((grid0.n1, basis.size))
    th[:, basis.index(1, 0)] = 1e-4 * np.sin(np.pi * grid0.x1 / grid0.length)
    pert = Perturbation.from_modes(th, 0.5 * th, basis, grid0.h1)
    rep = audit(coefficient_set(bc0, pert, grid0.shape))
    checks["audit"] = {"passed": audit_passed(rep), "items": {k: v.as_dict() for k, v in rep.items()}}

    wt = _weight(cfg, bg, grid0.length)
    errs, gaps, lam = [], [], None
    resid = None
    n1s = sorted(cfg["verify.n1"])
    for n1 in n1s:
        grid = build_grid(cfg, bg, n1=n1)
        case = manufactured_problem(base(bg, grid.x1), grid, basis, kmax=cfg["verify.kmax"])
        sol = solve(case.problem, verify=False)
        if cfg["verify.corrupt"]:
            sol.theta[:, basis.index(1, 1)] += 1e-3 * np.sin(np.pi * grid.x1 / grid.length)
        errs.append(case.errors(sol)["total"])
        resid = residual(sol, case.problem, refined=False)
        if wt.feasible:
            er = energy_identity(sol, case.problem, wt)
            gaps.append(er.identity_gap)
            lam = er.lambda0
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    mms_ok = bool(ratios) and all(3.5 <= r <= 4.5 for r in ratios) and errs[-1] <= 1e-5
    checks["mms"] = {"passed": mms_ok, "n1": n1s, "errors": errs, "ratios": ratios,
                     "finest_residual": resid}
    orders = [float(np.log2(gaps[i] / gaps[i + 1])) if gaps[i + 1] > 0 else float("inf")
              for i in range(len(gaps) - 1)]
    e_ok = wt.feasible and bool(orders) and min(orders) >= 1.8 and lam is not None and lam > 0
    checks["energy"] = {"passed": e_ok, "gaps": gaps, "orders": orders, "lambda0": lam,
                        "weight_feasible": wt.feasible}
    if refine:
        def factory(n1, m):
            g = build_grid(cfg, bg, n1=n1)
            b = CrossSectionBasis(m, g.n2, g.n3)
            return manufactured_problem(base(bg, g.x1), g, b, kmax=min(cfg["verify.kmax"], m)).problem
        ms = sorted({cfg["verify.kmax"], cfg["solver.m_max"]})
        rows = convergence_study(factory, ms, n1s[:-1] if len(n1s) > 1 else n1s,
                                 reference=(n1s[-1], ms[-1]))
        write_table(out / "convergence.csv", ["m_max", "n1", "err_psi", "err_Psi", "order"],
                    [[r.m_max for r in rows], [r.n1 for r in rows], [r.err_psi for r in rows],
                     [r.err_cap_psi for r in rows],
                     [float("nan") if r.order is None else r.order for r in rows]])
    passed = all(c["passed"] for c in checks.values())
    write_json(out / "verify.json", {"passed": passed, "checks": checks, "config": cfg.echo(),
                                     "versions": _versions()})
    for name, c in checks.items():
        print(f"{name}: {'PASS' if c['passed'] else 'FAIL'}")
    return EXIT_OK if passed else EXIT_VERIFY


COMMANDS = {
    "background": cmd_background,
    "weight": cmd_weight,
    "solve-linear": cmd_solve_linear,
    "solve": cmd_solve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epduct", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="config file (section.key = value lines)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, help=f"BLAS/OpenMP threads (default: ${THREADS_ENV})")
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--n3", type=int)
    p.add_argument("--length", type=float, help="duct length L")
    p.add_argument("--m-max", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("--sweep", help="comma separated sigma values (solve) or lengths (weight)")
    p.add_argument("--corrupt", action="store_true", help="verify: inject a spurious mode")
    p.add_argument("--refine", action="store_true", help="verify: write a convergence-order table")
    return p


def load_config(args) -> RunConfig:
    cfg = cfgmod.load(args.config) if args.config else RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k, v)
    for key, val in (("grid.n1", args.n1), ("grid.n2", args.n2), ("grid.n3", args.n3),
                     ("grid.length", args.length), ("solver.m_max", args.m_max)):
        if val is not None:
            cfg.set(key, str(val))
    if args.sweep:
        cfg.set("weight.sweep" if args.command == "weight" else "data.sweep", args.sweep)
    if args.corrupt:
        cfg.set("verify.corrupt", "true")
    if args.out:
        cfg.set("output.dir", args.out)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads(args.threads)
        cfg = load_config(args)
        out = Path(cfg["output.dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            return cmd_verify(cfg, out, refine=args.refine)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        from . import nonlinear
        if isinstance(exc, nonlinear.InfeasibleWeightError):
            print(f"{exc}; run 'epduct weight' to inspect the margins", file=sys.stderr)
            return EXIT_INFEASIBLE
        if isinstance(exc, (nonlinear.NonContractionError, nonlinear.IterateEscapedError)):
            print(str(exc), file=sys.stderr)
            return EXIT_NONCONTRACTION
        if isinstance(exc, nonlinear.RegimeViolationError):
            print(str(exc), file=sys.stderr)
            return EXIT_VERIFY
        if isinstance(exc, nonlinear.DataTooLargeError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
