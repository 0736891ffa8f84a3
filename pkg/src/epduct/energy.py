"""Energy weight synthesis and numerical evaluation of the H1 energy identity.

For a weight W(x1) the identity reads LHS(psi, Psi; W) = RHS with

    LHS = int_{Gamma_L} (psi_1^2 - sum_{i,j>=2} a_ij psi_i psi_j) W/2
        + int (a1 W - W'/2) psi_1^2 + 1/2 sum_{i,j>=2} d1(a_ij W) psi_i psi_j
        + int |grad Psi|^2 + h1 Psi^2
        + int (b1 Psi_1 + b2 Psi) W psi_1 + h2 psi_1 Psi
        - sum_{i>=2} int d_i a_i1 W psi_1^2 - sum_{i,j>=2} int d_j a_ij W psi_1 psi_i
    RHS = int_{Gamma_0} W g^2/2 + int f1 W psi_1 - f2 Psi.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .background import BackgroundSolution
from .coefficients import BaseCoefficients, base as base_coefficients
from .grid import deriv, trapezoid_weights


class CoefficientInvariantError(ValueError):
    pass


def kappa0(base: BaseCoefficients) -> float:
    k = float(np.min(base.h1_bar))
    if not k > 0:
        raise CoefficientInvariantError(f"kappa0 = {k} is not positive")
    return k


def q0(base: BaseCoefficients, w, kappa: float | None = None, sl=slice(None)):
    """4((b1^2 + b2^2/kappa0) W^2 + h2^2/kappa0), pointwise."""
    kappa = kappa0(base) if kappa is None else kappa
    b1, b2, h2 = base.b1_bar[sl], base.b2_bar[sl], base.h2_bar[sl]
    return 4.0 * ((b1**2 + b2**2 / kappa) * np.asarray(w) ** 2 + h2**2 / kappa)


def margins(base: BaseCoefficients, w, dw, kappa: float) -> np.ndarray:
    """Rows: W, a1 W - W'/2 - q0(W)/2, (a22 W)'/2."""
    m2 = base.a1_bar * w - 0.5 * dw - 0.5 * q0(base, w, kappa)
    m3 = 0.5 * (base.da22_bar * w + base.a22_bar * dw)
    return np.vstack([w, m2, m3])


@dataclass
class EnergyWeight:
    x1: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    margins: np.ndarray
    feasible_length: float
    length: float
    kappa: float
    min_margin: float
    policy: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.feasible_length >= self.length * (1 - 1e-12)

    @property
    def l_star(self) -> float:
        return self.feasible_length

    def restricted(self) -> "EnergyWeight":
        """The weight on [0, length] only."""
        keep = self.x1 <= self.length * (1 + 1e-12)
        return EnergyWeight(self.x1[keep], self.w[keep], self.dw[keep], self.margins[:, keep],
                            self.feasible_length, self.length, self.kappa, self.min_margin, self.policy)

    def min_margins(self, upto: float | None = None) -> np.ndarray:
        upto = self.length if upto is None else upto
        keep = self.x1 <= upto * (1 + 1e-12)
        return self.margins[:, keep].min(axis=1)

    def on(self, x1):
        """(W, W') at arbitrary points by cubic Hermite interpolation."""
        spl = CubicHermiteSpline(self.x1, self.w, self.dw)
        return spl(x1), spl(x1, 1)


def weight_slope(base: BaseCoefficients, i, w, kappa, safety, floor):
    """Policy slope at node i: a safety margin below the tighter of the two upper bounds.

    (ii)  W' < 2 a1 W - q0(W)
    (iii) a22 W' > -a22' W with a22 < 0, i.e. W' < a22' W / |a22|
    """
    up2 = 2.0 * base.a1_bar[i] * w - q0(base, w, kappa, sl=i)
    up3 = base.da22_bar[i] * w / np.abs(base.a22_bar[i])
    up = min(up2, up3)
    return up - safety * max(abs(up), floor)


def synthesize_weight(bg: BackgroundSolution, length: float, n: int = 401, w0: float = 1.0,
                      safety: float = 0.1, floor: float = 0.05, min_margin: float = 1e-3,
                      horizon: float | None = None) -> EnergyWeight:
    """Integrate the policy ODE with RK4 from W(0) = w0 up to ``horizon``.

    ``horizon`` defaults to the background length, so the returned
    feasible_length is the largest prefix (bounded by the background) on
    which every margin stays >= ``min_margin``.  kappa0 is taken over the
    whole background.
    """
    if not 0 < length <= bg.length * (1 + 1e-12):
        raise ValueError("length must lie in (0, L1]")
    horizon = bg.length if horizon is None else min(horizon, bg.length)
    horizon = max(horizon, length)
    kap = kappa0(base_coefficients(bg))
    steps = max(2, int(np.ceil((n - 1) * horizon / length)))
    xf = np.linspace(0.0, horizon, 2 * steps + 1)
    bc = base_coefficients(bg, xf)
    h = horizon / steps
    w = np.full(steps + 1, np.nan)
    dw = np.full(steps + 1, np.nan)
    w[0] = w0
    stop = steps
    for s in range(steps):
        i = 2 * s
        y = w[s]
        k1 = weight_slope(bc, i, y, kap, safety, floor)
        dw[s] = k1
        k2 = weight_slope(bc, i + 1, y + 0.5 * h * k1, kap, safety, floor)
        k3 = weight_slope(bc, i + 1, y + 0.5 * h * k2, kap, safety, floor)
        k4 = weight_slope(bc, i + 2, y + h * k3, kap, safety, floor)
        w[s + 1] = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not w[s + 1] > 0:
            stop = s + 1
            break
    x = xf[::2][: stop + 1]
    w = w[: stop + 1]
    dw = dw[: stop + 1]
    if stop == steps and np.isnan(dw[-1]):
        dw[-1] = weight_slope(bc, 2 * steps, w[-1], kap, safety, floor)
    elif np.isnan(dw[-1]):
        dw[-1] = dw[-2]
    sub = base_coefficients(bg, x)
    m = margins(sub, w, dw, kap)
    ok = np.all(m >= min_margin, axis=0)
    bad = np.flatnonzero(~ok)
    feas = float(x[-1]) if bad.size == 0 else (float(x[bad[0] - 1]) if bad[0] > 0 else 0.0)
    weight = EnergyWeight(x, w, dw, m, feas, float(length), kap, min_margin,
                          {"safety": safety, "floor": floor, "w0": w0, "steps": steps})
    return weight


def reaudit(weight: EnergyWeight, bg: BackgroundSolution, factor: int = 4) -> np.ndarray:
    """Margins of the interpolated weight on a grid ``factor`` times finer, on [0, length]."""
    xr = weight.restricted().x1
    xf = np.linspace(0.0, float(xr[-1]), factor * (len(xr) - 1) + 1)
    w, dw = weight.on(xf)
    return margins(base_coefficients(bg, xf), w, dw, weight.kappa)


def length_sweep(bg: BackgroundSolution, lengths, **kw) -> list[dict]:
    out = []
    for L in lengths:
        wt = synthesize_weight(bg, L, **kw)
        out.append({"L": float(L), "feasible": wt.feasible, "feasible_length": wt.feasible_length,
                    "min_margin": float(wt.min_margins(min(L, wt.x1[-1])).min())})
    return out


# -- energy identity ------------------------------------------------------

@dataclass
class EnergyReport:
    terms: dict
    lhs: float
    rhs: float
    volume_form: float
    identity_gap: float
    lambda0: float
    rayleigh: float
    h1_ratio: float

    @property
    def i_h(self) -> float:
        return self.terms["I_H"]

    @property
    def j_e(self) -> float:
        return self.terms["J_E"]

    def as_dict(self) -> dict:
        return {"terms": self.terms, "lhs": self.lhs, "rhs": self.rhs, "volume_form": self.volume_form,
                "identity_gap": self.identity_gap, "lambda0": self.lambda0, "rayleigh": self.rayleigh,
                "h1_ratio": self.h1_ratio}


def _fields(sol):
    b, h = sol.basis, sol.grid.h1
    rec = b.reconstruct
    out = {}
    for name, c in (("psi", sol.theta), ("Psi", sol.cap_theta)):
        c1 = deriv(c, h, 0)
        out[name] = rec(c)
        out[name + "_1"] = rec(c1)
        out[name + "_2"] = rec(c, d2=1)
        out[name + "_3"] = rec(c, d3=1)
    return out


def energy_terms(sol, problem, w, dw) -> dict:
    grid, b = sol.grid, sol.basis
    cs = problem.coeffs
    base = cs.base
    wv = trapezoid_weights(grid.n1, grid.h1)[:, None, None] * b.weights[None]
    wc = b.weights
    F = _fields(sol)
    p1 = F["psi_1"]
    pg = (F["psi_2"], F["psi_3"])
    a = cs.a
    W = w[:, None, None]
    bc = lambda v: v[:, None, None]  # noqa: E731
    def integ(f):
        return float(np.sum(wv * f))
    t = {}
    quad_L = sum(a[-1, ..., 1 + i, 1 + j] * pg[i][-1] * pg[j][-1] for i in range(2) for j in range(2))
    t["boundary_L"] = float(np.sum(wc * (p1[-1] ** 2 - quad_L)) * w[-1] / 2)
    t["psi1_sq"] = integ((bc(base.a1_bar) * W - 0.5 * bc(dw)) * p1**2)
    if cs.frozen_to_base:
        da1 = np.broadcast_to(bc(base.da22_bar), a.shape[:3])
        d1aw = {(i, j): (da1 * W + bc(base.a22_bar) * bc(dw)) * (i == j) for i in range(2) for j in range(2)}
        dcross = None
    else:
        d1aw = {(i, j): deriv(a[..., 1 + i, 1 + j], grid.h1, 0) * W + a[..., 1 + i, 1 + j] * bc(dw)
                for i in range(2) for j in range(2)}
        dcross = True
    t["transverse"] = integ(0.5 * sum(d1aw[i, j] * pg[i] * pg[j] for i in range(2) for j in range(2)))
    Pg = (F["Psi_1"], F["Psi_2"], F["Psi_3"])
    t["elliptic"] = integ(sum(g * g for g in Pg) + bc(base.h1_bar) * F["Psi"] ** 2)
    t["coupling"] = integ((bc(base.b1_bar) * F["Psi_1"] + bc(base.b2_bar) * F["Psi"]) * W * p1
                          + bc(base.h2_bar) * p1 * F["Psi"])
    if dcross is None:
        t["div_a1"] = 0.0
        t["div_a23"] = 0.0
    else:
        hs = (grid.h2, grid.h3)
        t["div_a1"] = -integ(sum(deriv(a[..., 1 + i, 0], hs[i], 1 + i) for i in range(2)) * W * p1**2)
        t["div_a23"] = -integ(sum(deriv(a[..., 1 + i, 1 + j], hs[j], 1 + j) * W * p1 * pg[i]
                                  for i in range(2) for j in range(2)))
    t["rhs_entrance"] = float(np.sum(wc * problem.g**2) * w[0] / 2)
    t["rhs_sources"] = integ(cs.f1 * W * p1 - cs.f2 * F["Psi"])
    t["norm_sq"] = integ(p1**2 + pg[0] ** 2 + pg[1] ** 2 + sum(g * g for g in Pg) + F["Psi"] ** 2)
    return t, F


def energy_identity(sol, problem, weight: EnergyWeight, lambda_nodes: int = 101) -> EnergyReport:
    """Evaluate both sides of the identity and the coercivity constant.

    The volume form int W psi_1 L1 - Psi L2 (with the discrete operators) is
    reported as an independent cross-check of the boundary+bulk form.
    """
    grid = sol.grid
    if len(weight.x1) < 2 or weight.x1[-1] < grid.length * (1 - 1e-9):
        raise ValueError("weight does not cover the solution grid")
    w, dw = weight.on(grid.x1)
    t, F = energy_terms(sol, problem, w, dw)
    lhs_keys = ("boundary_L", "psi1_sq", "transverse", "elliptic", "coupling", "div_a1", "div_a23")
    lhs = float(sum(t[k] for k in lhs_keys))
    rhs = t["rhs_entrance"] + t["rhs_sources"]
    # volume form int W psi_1 L1 - Psi L2 with differences that reach the end nodes
    from .linear import _apply_ops
    h, b = grid.h1, sol.basis
    th, Th = sol.theta, sol.cap_theta
    d1, D1 = deriv(th, h, 0), deriv(Th, h, 0)
    l1, l2 = _apply_ops(b, problem.coeffs, problem.coeffs.base, slice(None), th, d1, deriv(d1, h, 0),
                        Th, D1, deriv(D1, h, 0))
    wfull = trapezoid_weights(grid.n1, h)[:, None, None] * b.weights[None]
    vol = float(np.sum(wfull * (w[:, None, None] * F["psi_1"] * l1 - F["Psi"] * l2)))
    # J_E = int |grad Psi|^2 + h1 Psi^2 + h2 psi_1 Psi, and I_H is the rest
    base = problem.coeffs.base
    jh2 = float(np.sum(wfull * base.h2_bar[:, None, None] * F["psi_1"] * F["Psi"]))
    t["J_E"] = t["elliptic"] + jh2
    t["I_H"] = lhs - t["J_E"] - t["rhs_entrance"]
    norm = t["norm_sq"]
    rayleigh = lhs / norm if norm > 0 else float("nan")
    lam = lambda0_form(problem.coeffs.base, weight, sol.basis, grid.length, lambda_nodes)
    h1 = apriori_check(sol, problem)["ratio"]
    return EnergyReport(terms=t, lhs=lhs, rhs=rhs, volume_form=vol + t["rhs_entrance"],
                        identity_gap=abs(lhs - rhs), lambda0=lam, rayleigh=rayleigh, h1_ratio=h1)


def _diff_matrix(n, h):
    d = np.zeros((n, n))
    for i in range(1, n - 1):
        d[i, i - 1], d[i, i + 1] = -0.5 / h, 0.5 / h
    d[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    d[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return d


def lambda0_form(base: BaseCoefficients, weight: EnergyWeight, basis, length: float, n: int = 101) -> float:
    """Smallest generalized eigenvalue of the frozen-coefficient energy form.

    With a_ij = a_bar_ij the form decouples by mode; for each omega_k it is
    compared with int theta'^2 + omega theta^2 + Theta'^2 + omega Theta^2 + Theta^2,
    on a uniform x1 grid of ``n`` nodes with theta(0) = 0 and Theta(L) = 0.
    """
    x = np.linspace(0.0, length, n)
    h = x[1] - x[0]
    s = {name: CubicSpline(base.x1, getattr(base, name))(x)
         for name in ("a1_bar", "a22_bar", "da22_bar", "b1_bar", "b2_bar", "h1_bar", "h2_bar")}
    w, dw = weight.on(x)
    tw = trapezoid_weights(n, h)
    D = _diff_matrix(n, h)
    def gram(c, left, right):
        return left.T @ (np.diag(tw * c)) @ right
    I = np.eye(n)
    free = np.r_[np.arange(1, n), n + np.arange(0, n - 1)]
    best = np.inf
    for om in np.unique(basis.omega):
        q_tt = gram(s["a1_bar"] * w - 0.5 * dw, D, D) + gram(0.5 * (s["da22_bar"] * w + s["a22_bar"] * dw) * om, I, I)
        end = np.zeros(n)
        end[-1] = 1.0
        q_tt += 0.5 * w[-1] * (np.outer(D[-1], D[-1]) - s["a22_bar"][-1] * om * np.outer(end, end))
        q_TT = gram(np.ones(n), D, D) + gram(om + s["h1_bar"], I, I)
        # bilinear cross terms (b1 Theta' + b2 Theta) W theta' + h2 theta' Theta
        c_tT = gram(s["b1_bar"] * w, D, D) + gram(s["b2_bar"] * w + s["h2_bar"], D, I)
        Q = np.block([[q_tt, 0.5 * c_tT], [0.5 * c_tT.T, q_TT]])
        N = np.block([[gram(np.ones(n), D, D) + gram(om * np.ones(n), I, I), np.zeros((n, n))],
                      [np.zeros((n, n)), gram(np.ones(n), D, D) + gram((om + 1.0) * np.ones(n), I, I)]])
        Qf = Q[np.ix_(free, free)]
        Nf = N[np.ix_(free, free)]
        Qf = 0.5 * (Qf + Qf.T)
        lam = sla.eigh(Qf, Nf, eigvals_only=True, subset_by_index=[0, 0])[0]
        best = min(best, float(lam))
    return best


def apriori_check(sol, problem) -> dict:
    """(||psi||_H1 + ||Psi||_H1) / (||g||_{L2(Gamma0)} + ||f1|| + ||f2||)."""
    grid, b = sol.grid, sol.basis
    wv = trapezoid_weights(grid.n1, grid.h1)[:, None, None] * b.weights[None]
    gn = float(np.sqrt(np.sum(b.weights * problem.g**2)))
    f1n = float(np.sqrt(np.sum(wv * problem.coeffs.f1**2)))
    f2n = float(np.sqrt(np.sum(wv * problem.coeffs.f2**2)))
    psi_h1, cap_h1 = sol.h1_norms()
    data = gn + f1n + f2n
    num = psi_h1 + cap_h1
    if data == 0.0:
        if num == 0.0:
            return {"ratio": 0.0, "status": "vacuous", "data": 0.0, "solution": 0.0}
        return {"ratio": float("inf"), "status": "solver_failure", "data": 0.0, "solution": num}
    return {"ratio": num / data, "status": "ok", "data": data, "solution": num,
            "g": gn, "f1": f1n, "f2": f2n}
