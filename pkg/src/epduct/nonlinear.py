"""Picard iteration for the nonlinear boundary value problem.

Each step freezes a_ij and the sources f1, f2 at the current iterate
(optionally after mollification), shifts Psi to homogeneous boundary data
and solves the linear problem.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .background import BackgroundSolution
from .boundary import BoundaryData, homogenize_psi, sigma
from .coefficients import EPS_BAR, Perturbation, base as base_coefficients, coefficient_set
from .energy import synthesize_weight
from .extension import MollifierSpec, mollify
from .gas import density, sound_speed_sq
from .grid import ck_norm, deriv, one_sided_normal, sobolev_norm, trapezoid_weights
from .linear import LinearProblem, _apply_ops, solve
from .spectral import CrossSectionBasis

SIGMA_BAR = 1e-3


class NonContractionError(RuntimeError):
    pass


class IterateEscapedError(RuntimeError):
    pass


class RegimeViolationError(RuntimeError):
    pass


class InfeasibleWeightError(RuntimeError):
    pass


class DataTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class IterationConfig:
    epsilon: float = 1e-2
    eps_bar: float = EPS_BAR
    sigma_bar: float = SIGMA_BAR
    max_iter: int = 30
    contraction_tol: float = 1e-10
    residual_tol: float = 1e-6
    under_relaxation: float = 1.0
    r_factor: float = 2.0
    roundoff_floor: float = 1e-12
    m_max: int = 8

    def __post_init__(self):
        if not 0 < self.epsilon <= self.eps_bar:
            raise ValueError("epsilon must lie in (0, eps_bar]")
        if not (self.contraction_tol > 0 and self.residual_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.under_relaxation <= 1:
            raise ValueError("under_relaxation must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.r_factor < 0:
            raise ValueError("r_factor must be >= 0")


@dataclass(frozen=True)
class IterationState:
    """Modal coefficients of the iterate (psi, Psi); Psi includes the boundary shift."""

    theta: np.ndarray
    cap_theta: np.ndarray
    iteration: int = 0
    norm_proxy: float = 0.0
    step_diffs: tuple = ()
    residuals: tuple = ()


@dataclass
class Context:
    data: BoundaryData
    bg: BackgroundSolution
    config: IterationConfig
    basis: CrossSectionBasis
    base: object
    shift: object
    mollifier: MollifierSpec | None
    log: object = None

    @property
    def grid(self):
        return self.data.grid


def make_context(data: BoundaryData, bg: BackgroundSolution, config: IterationConfig, log=None) -> Context:
    g = data.grid
    basis = CrossSectionBasis(config.m_max, g.n2, g.n3)
    bc = base_coefficients(bg, g.x1)
    shift = homogenize_psi(data, basis, bc)
    moll = None
    if config.r_factor > 0:
        moll = MollifierSpec(config.r_factor * max(g.spacing))
    return Context(data, bg, config, basis, bc, shift, moll, log)


def _l2_modal(c, grid) -> float:
    w = trapezoid_weights(grid.n1, grid.h1)
    return float(np.sqrt(w @ np.sum(c * c, axis=1)))


def membership(psi: np.ndarray, cap_psi: np.ndarray, grid, epsilon: float, slip_factor: float = 1.0):
    """Discrete H^4 proxy of the pair against epsilon, plus the wall slip check.

    For a slip field the second-order one-sided normal difference is bounded
    by h^2 |f'''| / 3, so each field must satisfy
    max |d_n f| <= slip_factor * h^2 * ||f||_C3.
    """
    n_psi = sobolev_norm(psi, grid.spacing, 4)
    n_cap = sobolev_norm(cap_psi, grid.spacing, 4)
    h = max(grid.h2, grid.h3)
    slip_ok, worst = True, 0.0
    for f in (psi, cap_psi):
        slip = 0.0
        for ax, hh in ((1, grid.h2), (2, grid.h3)):
            for side in (0, 1):
                slip = max(slip, float(np.max(np.abs(one_sided_normal(f, hh, ax, side)))))
        if slip > 0:
            bound = slip_factor * h * h * ck_norm(f, grid.spacing, 3)
            slip_ok &= slip <= bound
            worst = max(worst, slip / bound)
    norm = n_psi + n_cap
    ok = norm <= epsilon * (1 + 1e-12) and slip_ok
    return ok, {"norm": norm, "psi_H4": n_psi, "Psi_H4": n_cap, "slip_ratio": worst}


def _perturbation(ctx: Context, theta, cap_theta) -> Perturbation:
    b, g = ctx.basis, ctx.grid
    if ctx.mollifier is not None and (np.any(theta) or np.any(cap_theta)):
        spacing = g.spacing
        theta = b.project(mollify(b.reconstruct(theta), spacing, ctx.mollifier))
        cap_theta = b.project(mollify(b.reconstruct(cap_theta), spacing, ctx.mollifier))
    return Perturbation.from_modes(theta, cap_theta, b, g.h1)


def regime_margin(ctx: Context, theta, cap_theta) -> float:
    """min over nodes of (d1 phi)^2 - c^2 for phi = phi0 + psi, Phi = Phi0 + Psi."""
    pert = Perturbation.from_modes(theta, cap_theta, ctx.basis, ctx.grid.h1)
    z = ctx.base.z0[:, None, None] + pert.xi
    q = ctx.base.q0()[:, None, None, :] + pert.zeta
    return float(np.min(q[..., 0] ** 2 - sound_speed_sq(ctx.base.gas, z, q)))


def picard_step(state: IterationState, ctx: Context) -> IterationState:
    g, b, cfg = ctx.grid, ctx.basis, ctx.config
    pert = _perturbation(ctx, state.theta, state.cap_theta)
    cs = coefficient_set(ctx.base, pert, g.shape, db=ctx.data.db, provenance={"iteration": state.iteration})
    cs = replace(cs, f1=cs.f1 + ctx.shift.df1, f2=cs.f2 + ctx.shift.df2)
    problem = LinearProblem(g, b, cs, ctx.data.g1, check=True)
    sol = solve(problem, verify=False)
    theta = sol.theta
    cap_theta = sol.cap_theta + ctx.shift.modes
    om = cfg.under_relaxation
    if om < 1:
        theta = om * theta + (1 - om) * state.theta
        cap_theta = om * cap_theta + (1 - om) * state.cap_theta
    diff = np.hypot(_l2_modal(theta - state.theta, g), _l2_modal(cap_theta - state.cap_theta, g))
    size = np.hypot(_l2_modal(theta, g), _l2_modal(cap_theta, g))
    rel = diff / size if size > 0 else 0.0
    psi, cap = b.reconstruct(theta), b.reconstruct(cap_theta)
    ok, mem = membership(psi, cap, g, cfg.epsilon)
    res = nonlinear_residual(ctx, theta, cap_theta)
    new = IterationState(theta, cap_theta, state.iteration + 1, mem["norm"],
                         state.step_diffs + (float(diff),), state.residuals + (res["l2"],))
    if ctx.log is not None:
        rec = {"iteration": new.iteration, "step_diff": float(diff), "step_rel": float(rel),
               "residual": res["l2"], "norm_proxy": mem["norm"],
               "regime_margin": regime_margin(ctx, theta, cap_theta),
               "solve_time": sol.info.get("factor_solve")}
        ctx.log.write(json.dumps(rec) + "\n")
    if not ok:
        raise IterateEscapedError(
            f"iterate left the iteration set (H4 proxy {mem['norm']:.3e} > epsilon {cfg.epsilon:.1e}, "
            f"slip ratio {mem['slip_ratio']:.2f}); reduce sigma")
    return new


def nonlinear_residual(ctx: Context, theta, cap_theta) -> dict:
    """Residuals of the unmollified perturbation system at the interior x1 nodes."""
    g, b = ctx.grid, ctx.basis
    h = g.h1
    pert = Perturbation.from_modes(theta, cap_theta, b, h)
    cs = coefficient_set(ctx.base, pert, g.shape, db=ctx.data.db)
    sl = slice(1, -1)
    d1 = (theta[2:] - theta[:-2]) / (2 * h)
    d11 = (theta[2:] - 2 * theta[1:-1] + theta[:-2]) / h**2
    T1 = (cap_theta[2:] - cap_theta[:-2]) / (2 * h)
    T11 = (cap_theta[2:] - 2 * cap_theta[1:-1] + cap_theta[:-2]) / h**2
    l1, l2 = _apply_ops(b, cs, ctx.base, sl, theta[sl], d1, d11, cap_theta[sl], T1, T11)
    r1 = l1 - cs.f1[sl]
    r2 = l2 - cs.f2[sl]
    w = trapezoid_weights(g.n1, h)[sl, None, None] * b.weights[None]
    n1 = float(np.sqrt(np.sum(w * r1 * r1)))
    n2 = float(np.sqrt(np.sum(w * r2 * r2)))
    return {"first": n1, "second": n2, "l2": float(np.hypot(n1, n2)),
            "max": float(max(np.abs(r1).max(), np.abs(r2).max()))}


def conservative_residual(ctx: Context, theta, cap_theta, refine: int = 2) -> dict:
    """div(rho grad phi) and Lap Phi - rho + b in the original variables.

    Evaluated on a grid ``refine`` times finer in every direction: modal
    coefficients are spline-interpolated in x1 and summed exactly across.
    Background derivatives are exact (rho0 u0 = J0, Phi0'' = E'); the
    perturbation parts are differenced.
    """
    g, b = ctx.grid, ctx.basis
    n1 = refine * (g.n1 - 1) + 1
    x1 = np.linspace(0.0, g.length, n1)
    x2 = np.linspace(-1.0, 1.0, refine * (g.n2 - 1) + 1)
    x3 = np.linspace(-1.0, 1.0, refine * (g.n3 - 1) + 1)
    h1, h2, h3 = x1[1] - x1[0], x2[1] - x2[0], x3[1] - x3[0]
    th = CubicSpline(g.x1, theta, axis=0)
    Th = CubicSpline(g.x1, cap_theta, axis=0)

    def rec(c, d2=0, d3=0):
        return b.reconstruct(c, x2=x2, x3=x3, d2=d2, d3=d3)

    bc = base_coefficients(ctx.bg, x1)
    gas = bc.gas
    z = bc.z0[:, None, None] + rec(Th(x1))
    q = np.stack([bc.u[:, None, None] + rec(th(x1, 1)), rec(th(x1), d2=1), rec(th(x1), d3=1)], axis=-1)
    rho = density(gas, z, q)
    div = (deriv(rho * q[..., 0] - gas.j0, h1, 0) + deriv(rho * q[..., 1], h2, 1)
           + deriv(rho * q[..., 2], h3, 2))
    c = Th(x1)
    lap = rec(Th(x1, 2)) + rec(c, d2=2) + rec(c, d3=2)
    bb = ctx.data.b0 + rec(CubicSpline(g.x1, b.project(ctx.data.db), axis=0)(x1))
    de = ctx.bg.sample(x1)["de"][:, None, None]
    pois = de + lap - rho + bb
    w = (trapezoid_weights(n1, h1)[:, None, None] * trapezoid_weights(len(x2), h2)[None, :, None]
         * trapezoid_weights(len(x3), h3)[None, None, :])
    sl = (slice(1, -1),)
    return {"mass_l2": float(np.sqrt(np.sum(w[sl] * div[sl] ** 2))),
            "poisson_l2": float(np.sqrt(np.sum(w[sl] * pois[sl] ** 2))),
            "mass_max": float(np.abs(div[sl]).max()), "poisson_max": float(np.abs(pois[sl]).max()),
            "refine": refine}


def _decay_ratio(diffs, sizes_floor) -> float:
    """Largest successive ratio among step differences above the roundoff floor."""
    d = [x for x in diffs if x > sizes_floor]
    if len(d) < 2:
        return 0.0
    return float(max(d[i + 1] / d[i] for i in range(len(d) - 1)))


@dataclass
class NonlinearReport:
    converged: bool
    iterations: int
    step_diffs: list
    residuals: list
    q: float
    sigma: float
    residual: dict
    conservative: dict
    regime_margin: float
    norms: dict
    ratio: float
    fixed_point_move: float
    norm_proxy: float
    weight_feasible_length: float
    timings: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def solve_nonlinear(data: BoundaryData, bg: BackgroundSolution, config: IterationConfig | None = None,
                    log=None, check_weight: bool = True):
    """Run Picard from the zero iterate; returns (psi, Psi, report).

    Raises NonContractionError when ``max_iter`` steps do not reach
    ``contraction_tol`` (relative step size), RegimeViolationError when the
    converged flow is not supersonic everywhere.
    """
    config = config or IterationConfig()
    t0 = time.perf_counter()
    sig = sigma(data).sigma
    if sig > config.sigma_bar:
        raise DataTooLargeError(f"sigma = {sig:.3e} exceeds sigma_bar = {config.sigma_bar:.1e}")
    g = data.grid
    feas = float("nan")
    if check_weight:
        wt = synthesize_weight(bg, g.length)
        feas = wt.feasible_length
        if not wt.feasible:
            raise InfeasibleWeightError(f"no energy weight on [0, {g.length}] (feasible up to {feas:.4g})")
    ctx = make_context(data, bg, config, log)
    M = ctx.basis.size
    state = IterationState(np.zeros((g.n1, M)), np.zeros((g.n1, M)))
    converged = False
    for _ in range(config.max_iter):
        state = picard_step(state, ctx)
        size = np.hypot(_l2_modal(state.theta, g), _l2_modal(state.cap_theta, g))
        if state.step_diffs[-1] <= config.contraction_tol * size:
            converged = True
            break
    if not converged:
        raise NonContractionError(
            f"no contraction after {config.max_iter} steps (last diff {state.step_diffs[-1]:.3e}); "
            "try under_relaxation < 1 or smaller data")
    t1 = time.perf_counter()
    size = np.hypot(_l2_modal(state.theta, g), _l2_modal(state.cap_theta, g))
    extra = picard_step(state, replace(ctx, log=None))
    move = extra.step_diffs[-1] / size if size > 0 else extra.step_diffs[-1]
    margin = regime_margin(ctx, state.theta, state.cap_theta)
    if not margin > 0:
        raise RegimeViolationError(f"flow not supersonic everywhere (min margin {margin:.3e})")
    res = nonlinear_residual(ctx, state.theta, state.cap_theta)
    cons = conservative_residual(ctx, state.theta, state.cap_theta)
    from .linear import ModalSolution
    ms = ModalSolution(g, ctx.basis, state.theta, state.cap_theta)
    psi_h1, cap_h1 = ms.h1_norms()
    floor = config.roundoff_floor * size
    report = NonlinearReport(
        converged=converged, iterations=state.iteration, step_diffs=list(state.step_diffs),
        residuals=list(state.residuals), q=_decay_ratio(state.step_diffs, floor), sigma=sig,
        residual=res, conservative=cons, regime_margin=margin,
        norms={"psi_H1": psi_h1, "Psi_H1": cap_h1, "psi_L2": _l2_modal(state.theta, g),
               "Psi_L2": _l2_modal(state.cap_theta, g)},
        ratio=(psi_h1 + cap_h1) / sig if sig > 0 else float("nan"),
        fixed_point_move=float(move), norm_proxy=state.norm_proxy, weight_feasible_length=feas,
        timings={"iterate": t1 - t0, "verify": time.perf_counter() - t1})
    return ms.psi, ms.cap_psi, report, state
