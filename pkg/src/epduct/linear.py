"""Galerkin solver for the linear hyperbolic-elliptic boundary value problem.

psi = sum_j theta_j(x1) eta_j, Psi = sum_j Theta_j(x1) eta_j.  Projecting
both equations onto eta_k gives, at every x1,

    theta'' + C1 theta' + C0 theta + b1 Theta' + b2 Theta = F1
    Theta'' - (omega + h1) Theta - h2 theta'             = F2

with C1_kj = <2 a12 d2 eta_j + 2 a13 d3 eta_j, eta_k> + a1 delta_kj and
C0_kj = <a22 d22 eta_j + 2 a23 d23 eta_j + a33 d33 eta_j, eta_k>.  The x1
direction is discretized with second-order differences:

    theta(0) = 0, theta'(0) = <g, eta>     (one-sided)
    Theta'(0) = 0 (one-sided), Theta(L) = 0.
"""
from __future__ import annotations

import time
from types import SimpleNamespace
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .coefficients import CoefficientSet, audit, audit_passed
from .grid import DuctGrid, deriv, one_sided_normal
from .spectral import CrossSectionBasis


class LinearSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearProblem:
    grid: DuctGrid
    basis: CrossSectionBasis
    coeffs: CoefficientSet
    g: np.ndarray
    compat_tol: float | None = None
    check: bool = True

    def __post_init__(self):
        if self.coeffs.a.shape[:3] != self.grid.shape:
            raise ValueError("coefficient field does not match the grid")
        if self.g.shape != self.grid.cross_shape:
            raise ValueError("g must live on the entrance cross-section")
        if len(self.coeffs.base.x1) != self.grid.n1 or not np.allclose(self.coeffs.base.x1, self.grid.x1):
            raise ValueError("base coefficients must be sampled at the grid x1 nodes")
        if (self.basis.n2, self.basis.n3) != self.grid.cross_shape or self.basis.rule != "uniform":
            raise ValueError("basis must be sampled on the uniform cross-section grid")
        if self.check:
            rep = audit(self.coeffs)
            if not audit_passed(rep):
                bad = [k for k, v in rep.items() if not v.passed]
                raise ValueError(f"coefficient audit failed: {bad}")
            tol = self.compat_tol if self.compat_tol is not None else 10 * max(self.grid.h2, self.grid.h3) ** 2
            res = max(float(np.max(np.abs(one_sided_normal(self.g, h, ax, side))))
                      for ax, h in ((0, self.grid.h2), (1, self.grid.h3)) for side in (0, 1))
            if res > tol * max(1.0, float(np.max(np.abs(self.g)))):
                raise ValueError(f"g violates the Neumann compatibility condition (residual {res:.3e})")

    @property
    def n1(self) -> int:
        return self.grid.n1

    @property
    def m_max(self) -> int:
        return self.basis.m_max


@dataclass
class ModalSolution:
    grid: DuctGrid
    basis: CrossSectionBasis
    theta: np.ndarray
    cap_theta: np.ndarray
    info: dict = field(default_factory=dict)
    residuals: dict | None = None

    @property
    def psi(self) -> np.ndarray:
        return self.basis.reconstruct(self.theta)

    @property
    def cap_psi(self) -> np.ndarray:
        return self.basis.reconstruct(self.cap_theta)

    def l2_sq(self) -> float:
        """||psi||^2 + ||Psi||^2 (Parseval in the cross-section, trapezoid in x1)."""
        w = _trap(self.grid.n1, self.grid.h1)
        return float(w @ np.sum(self.theta**2 + self.cap_theta**2, axis=1))

    def h1_norms(self) -> tuple[float, float]:
        """(||psi||_H1, ||Psi||_H1) in the modal representation."""
        w = _trap(self.grid.n1, self.grid.h1)
        om = self.basis.omega
        out = []
        for c in (self.theta, self.cap_theta):
            c1 = deriv(c, self.grid.h1, 0)
            out.append(float(np.sqrt(w @ np.sum(c**2 + c1**2 + om * c**2, axis=1))))
        return out[0], out[1]


def _trap(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def modal_blocks(problem: LinearProblem, chunk: int = 32):
    """(C1, C0) with shape (n1, M, M); ``None`` entries mean diagonal (base-only) blocks."""
    b = problem.basis
    base = problem.coeffs.base
    if problem.coeffs.frozen_to_base:
        return None, None
    a = problem.coeffs.a
    n1, M = problem.n1, b.size
    we = (b.values() * b.weights).reshape(M, -1)
    d = {key: b.values(*key).reshape(M, -1) for key in ((1, 0), (0, 1), (2, 0), (0, 2), (1, 1))}
    flat = a.reshape(n1, -1, 3, 3)
    c1 = np.empty((n1, M, M))
    c0 = np.empty((n1, M, M))
    for s in range(0, n1, chunk):
        sl = slice(s, min(n1, s + chunk))
        def blk(coef, key):
            return (we[None] * coef[sl][:, None, :]) @ d[key].T
        c1[sl] = blk(2 * flat[..., 0, 1], (1, 0)) + blk(2 * flat[..., 0, 2], (0, 1))
        c0[sl] = blk(flat[..., 1, 1], (2, 0)) + blk(2 * flat[..., 1, 2], (1, 1)) + blk(flat[..., 2, 2], (0, 2))
    idx = np.arange(M)
    c1[:, idx, idx] += base.a1_bar[:, None]
    return c1, c0


@dataclass
class BlockSystem:
    matrix: sp.csc_matrix
    rhs: np.ndarray
    n1: int
    modes: int
    timings: dict


def _index(n, var, k, M):
    return (2 * n + var) * M + k


def assemble(problem: LinearProblem, f1_modes=None, f2_modes=None, g_modes=None) -> BlockSystem:
    """Sparse block system in the unknowns (theta_k(x1_n), Theta_k(x1_n)).

    Row of the theta equation centred at node n is stored at node n + 1,
    so that the matrix is close to block lower triangular.
    """
    t0 = time.perf_counter()
    b, base = problem.basis, problem.coeffs.base
    n1, M, h = problem.n1, b.size, problem.grid.h1
    F1 = b.project(problem.coeffs.f1) if f1_modes is None else f1_modes
    F2 = b.project(problem.coeffs.f2) if f2_modes is None else f2_modes
    G = b.project(problem.g) if g_modes is None else g_modes
    c1, c0 = modal_blocks(problem)
    t1 = time.perf_counter()
    rows, cols, vals = [], [], []
    k = np.arange(M)
    inner = np.arange(1, n1 - 1)

    def add(r, c, v):
        r, c, v = np.broadcast_arrays(r, c, v)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel().astype(float))

    nn = inner[:, None]
    kk = k[None, :]
    # theta rows: boundary
    add(_index(0, 0, k, M), _index(0, 0, k, M), 1.0)
    for j, cst in enumerate((-3.0, 4.0, -1.0)):
        add(_index(1, 0, k, M), _index(j, 0, k, M), cst / (2 * h))
    # theta rows: interior equation at node n stored at row (n+1)
    rth = _index(nn + 1, 0, kk, M)
    add(rth, _index(nn - 1, 0, kk, M), 1.0 / h**2)
    add(rth, _index(nn, 0, kk, M), -2.0 / h**2)
    add(rth, _index(nn + 1, 0, kk, M), 1.0 / h**2)
    b1 = base.b1_bar[inner][:, None]
    b2 = base.b2_bar[inner][:, None]
    add(rth, _index(nn + 1, 1, kk, M), b1 / (2 * h))
    add(rth, _index(nn - 1, 1, kk, M), -b1 / (2 * h))
    add(rth, _index(nn, 1, kk, M), b2)
    if c1 is None:
        a1 = base.a1_bar[inner][:, None]
        c0d = -base.a22_bar[inner][:, None] * b.omega[None, :]
        add(rth, _index(nn + 1, 0, kk, M), a1 / (2 * h))
        add(rth, _index(nn - 1, 0, kk, M), -a1 / (2 * h))
        add(rth, _index(nn, 0, kk, M), c0d)
    else:
        r3 = rth[:, :, None]
        jj = k[None, None, :]
        n3 = nn[:, :, None]
        add(r3, _index(n3 + 1, 0, jj, M), c1[inner] / (2 * h))
        add(r3, _index(n3 - 1, 0, jj, M), -c1[inner] / (2 * h))
        add(r3, _index(n3, 0, jj, M), c0[inner])
    # Theta rows
    for j, cst in enumerate((-3.0, 4.0, -1.0)):
        add(_index(0, 1, k, M), _index(j, 1, k, M), cst / (2 * h))
    rTh = _index(nn, 1, kk, M)
    add(rTh, _index(nn - 1, 1, kk, M), 1.0 / h**2)
    add(rTh, _index(nn + 1, 1, kk, M), 1.0 / h**2)
    add(rTh, _index(nn, 1, kk, M), -2.0 / h**2 - (b.omega[None, :] + base.h1_bar[inner][:, None]))
    h2 = base.h2_bar[inner][:, None]
    add(rTh, _index(nn + 1, 0, kk, M), -h2 / (2 * h))
    add(rTh, _index(nn - 1, 0, kk, M), h2 / (2 * h))
    add(_index(n1 - 1, 1, k, M), _index(n1 - 1, 1, k, M), 1.0)

    size = 2 * n1 * M
    mat = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    rhs = np.zeros((n1, 2, M))
    rhs[1, 0] = G
    rhs[2:, 0] = F1[1:-1]
    rhs[1:-1, 1] = F2[1:-1]
    t2 = time.perf_counter()
    return BlockSystem(mat, rhs.ravel(), n1, M, {"blocks": t1 - t0, "assembly": t2 - t1})


def solve(problem: LinearProblem, verify: bool = True, **modal) -> ModalSolution:
    system = assemble(problem, **modal)
    t0 = time.perf_counter()
    try:
        lu = spla.splu(system.matrix, permc_spec="COLAMD")
    except RuntimeError as exc:
        norm = spla.norm(system.matrix, 1)
        raise LinearSolverError(f"sparse factorization failed ({exc}); ||A||_1 = {norm:.3e}") from exc
    x = lu.solve(system.rhs)
    t1 = time.perf_counter()
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("non-finite solution; the block system is numerically singular")
    sol_arr = x.reshape(system.n1, 2, system.modes)
    rel = float(np.linalg.norm(system.matrix @ x - system.rhs) / max(np.linalg.norm(system.rhs), 1e-300))
    info = dict(system.timings, factor_solve=t1 - t0, nnz=int(system.matrix.nnz),
                fill=int(lu.L.nnz + lu.U.nnz), algebraic_residual=rel)
    sol = ModalSolution(problem.grid, problem.basis, sol_arr[:, 0].copy(), sol_arr[:, 1].copy(), info)
    if verify:
        sol.residuals = residual(sol, problem)
    return sol


def _operators_at_nodes(sol: ModalSolution, problem: LinearProblem):
    """Pointwise L1(psi, Psi) and L2(psi, Psi) at interior x1 nodes, using the solver stencils."""
    b, base, h = sol.basis, problem.coeffs.base, sol.grid.h1
    th, Th = sol.theta, sol.cap_theta
    inner = slice(1, -1)
    d1 = (th[2:] - th[:-2]) / (2 * h)
    d11 = (th[2:] - 2 * th[1:-1] + th[:-2]) / h**2
    T1 = (Th[2:] - Th[:-2]) / (2 * h)
    T11 = (Th[2:] - 2 * Th[1:-1] + Th[:-2]) / h**2
    t0 = th[inner]
    return _apply_ops(b, problem.coeffs, base, inner, t0, d1, d11, Th[inner], T1, T11)


def _apply_ops(b, coeffs, base, sl, t0, d1, d11, T0, T1, T11, a=None):
    a = coeffs.a[sl] if a is None else a
    rec = b.reconstruct
    psi_2nd = (a[..., 0, 0] * rec(d11) + 2 * a[..., 0, 1] * rec(d1, d2=1) + 2 * a[..., 0, 2] * rec(d1, d3=1)
               + a[..., 1, 1] * rec(t0, d2=2) + 2 * a[..., 1, 2] * rec(t0, d2=1, d3=1)
               + a[..., 2, 2] * rec(t0, d3=2))
    bc = lambda v: np.asarray(v)[..., None, None]  # noqa: E731
    l1 = psi_2nd + bc(base.a1_bar[sl]) * rec(d1) + bc(base.b1_bar[sl]) * rec(T1) + bc(base.b2_bar[sl]) * rec(T0)
    lap = rec(T11) + rec(T0, d2=2) + rec(T0, d3=2)
    l2 = lap - bc(base.h1_bar[sl]) * rec(T0) - bc(base.h2_bar[sl]) * rec(d1)
    return l1, l2


def residual(sol: ModalSolution, problem: LinearProblem, refined: bool = True) -> dict:
    """Interior PDE residuals and the boundary-condition residuals.

    ``nodes``: solver stencils at interior x1 nodes (pointwise, so the part
    of the sources outside the retained modes shows up here).
    ``refined``: cubic-spline derivatives at the x1 midpoints with the
    coefficients and sources interpolated there.
    """
    grid, b = sol.grid, sol.basis
    wcs = b.weights
    w1 = _trap(grid.n1 - 2, grid.h1)
    l1, l2 = _operators_at_nodes(sol, problem)
    r1 = l1 - problem.coeffs.f1[1:-1]
    r2 = l2 - problem.coeffs.f2[1:-1]
    def l2n(r, w):
        return float(np.sqrt(np.sum(w[:, None, None] * wcs[None] * r * r)))
    out = {"L1_max": float(np.max(np.abs(r1))), "L1_l2": l2n(r1, w1),
           "L2_max": float(np.max(np.abs(r2))), "L2_l2": l2n(r2, w1)}
    # Galerkin (projected) residual: should sit at the algebraic level
    out["L1_projected_max"] = float(np.max(np.abs(b.project(r1))))
    out["L2_projected_max"] = float(np.max(np.abs(b.project(r2))))
    if refined and grid.n1 >= 4:
        out.update(_refined_residual(sol, problem))
    h = grid.h1
    G = b.project(problem.g)
    th, Th = sol.theta, sol.cap_theta
    out["bc_psi_0"] = float(np.max(np.abs(th[0])))
    out["bc_dpsi_0"] = float(np.max(np.abs((-3 * th[0] + 4 * th[1] - th[2]) / (2 * h) - G)))
    out["bc_dPsi_0"] = float(np.max(np.abs((-3 * Th[0] + 4 * Th[1] - Th[2]) / (2 * h))))
    out["bc_Psi_L"] = float(np.max(np.abs(Th[-1])))
    xw = np.array([-1.0, 1.0])
    wall = max(np.max(np.abs(b.reconstruct(c, x2=xw, x3=b.nodes[1], d2=1))) for c in (th, Th))
    wall = max(wall, max(np.max(np.abs(b.reconstruct(c, x2=b.nodes[0], x3=xw, d3=1))) for c in (th, Th)))
    out["bc_wall"] = float(wall)
    return out


def _refined_residual(sol: ModalSolution, problem: LinearProblem) -> dict:
    grid, b, base = sol.grid, sol.basis, problem.coeffs.base
    x = grid.x1
    xm = 0.5 * (x[1:] + x[:-1])
    sth = CubicSpline(x, sol.theta, axis=0)
    sTh = CubicSpline(x, sol.cap_theta, axis=0)
    interp = lambda arr: CubicSpline(x, arr, axis=0)(xm)  # noqa: E731
    a = interp(problem.coeffs.a)
    f1 = interp(problem.coeffs.f1)
    f2 = interp(problem.coeffs.f2)

    mid = SimpleNamespace(**{name: CubicSpline(x, getattr(base, name))(xm)
                             for name in ("a1_bar", "b1_bar", "b2_bar", "h1_bar", "h2_bar")})
    sl = slice(None)
    l1, l2 = _apply_ops(b, None, mid, sl, sth(xm), sth(xm, 1), sth(xm, 2), sTh(xm), sTh(xm, 1), sTh(xm, 2), a=a)
    w = np.full(len(xm), grid.h1)
    wcs = b.weights
    r1, r2 = l1 - f1, l2 - f2
    return {"L1_refined_l2": float(np.sqrt(np.sum(w[:, None, None] * wcs * r1 * r1))),
            "L2_refined_l2": float(np.sqrt(np.sum(w[:, None, None] * wcs * r2 * r2))),
            "L1_refined_max": float(np.max(np.abs(r1))), "L2_refined_max": float(np.max(np.abs(r2)))}


@dataclass
class ConvergenceRow:
    m_max: int
    n1: int
    err_psi: float
    err_cap_psi: float
    order: float | None = None

    @property
    def err(self) -> float:
        return float(np.hypot(self.err_psi, self.err_cap_psi))


def _modal_error(sol: ModalSolution, ref: ModalSolution) -> tuple[float, float]:
    """Discrete L2 distance on the coarse x1 nodes; modes missing on one side count as zero."""
    step = (ref.grid.n1 - 1) // (sol.grid.n1 - 1)
    if step * (sol.grid.n1 - 1) != ref.grid.n1 - 1:
        raise ValueError("x1 grids are not nested")
    w = _trap(sol.grid.n1, sol.grid.h1)
    out = []
    for a, b in ((sol.theta, ref.theta[::step]), (sol.cap_theta, ref.cap_theta[::step])):
        full = b.copy()
        for i, (k, l) in enumerate(sol.basis.modes):
            full[:, ref.basis.index(k, l)] -= a[:, i]
        out.append(float(np.sqrt(w @ np.sum(full**2, axis=1))))
    return out[0], out[1]


def convergence_study(problem_factory, m_list, n1_list, reference=None) -> list[ConvergenceRow]:
    """Errors against a fine reference solve for every (m_max, n1) pair.

    ``problem_factory(n1, m_max)`` must return a LinearProblem. The default
    reference uses the largest m_max and twice the finest x1 resolution.
    Observed orders are computed along n1 at fixed m_max.
    """
    m_list, n1_list = sorted(m_list), sorted(n1_list)
    if reference is None:
        reference = (2 * (n1_list[-1] - 1) + 1, m_list[-1])
    ref = solve(problem_factory(*reference), verify=False)
    rows = []
    for m in m_list:
        prev = None
        for n1 in n1_list:
            sol = solve(problem_factory(n1, m), verify=False)
            e1, e2 = _modal_error(sol, ref)
            row = ConvergenceRow(m, n1, e1, e2)
            if prev is not None and row.err > 0 and prev.err > 0:
                row.order = float(np.log(prev.err / row.err) / np.log((n1 - 1) / (prev.n1 - 1)))
            rows.append(row)
            prev = row
    return rows
