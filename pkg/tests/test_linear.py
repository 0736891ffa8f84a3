import dataclasses

import numpy as np
import pytest

from epduct.coefficients import Perturbation, base, coefficient_set
from epduct.grid import DuctGrid
from epduct.linear import LinearProblem, convergence_study, residual, solve
from epduct.mms import manufactured_problem
from epduct.spectral import CrossSectionBasis


@pytest.fixture(scope="module")
def small(bg_moderate):
    grid = DuctGrid(81, 17, 17, 0.5)
    basis = CrossSectionBasis(4, 17, 17)
    return grid, basis, base(bg_moderate, grid.x1)


def _dense_mode_solve(bc, h, n, omega, F1, F2, G):
    """Independent per-mode discretisation with dense matrices."""
    D1 = (np.eye(n, k=1) - np.eye(n, k=-1)) / (2 * h)
    D2 = (np.eye(n, k=1) - 2 * np.eye(n) + np.eye(n, k=-1)) / h**2
    Z = np.zeros((n, n))
    top = D2 + np.diag(bc.a1_bar) @ D1 - np.diag(bc.a22_bar * omega)
    A = np.block([[top, np.diag(bc.b1_bar) @ D1 + np.diag(bc.b2_bar)],
                  [-np.diag(bc.h2_bar) @ D1, D2 - np.diag(omega + bc.h1_bar)]])
    rhs = np.concatenate([F1, F2])
    one_sided = np.zeros(n)
    one_sided[:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    for r in (0, n - 1, n, 2 * n - 1):
        A[r] = 0.0
        rhs[r] = 0.0
    A[0, 0] = 1.0
    A[n - 1, :n] = one_sided
    rhs[n - 1] = G
    A[n, n:] = one_sided
    A[2 * n - 1, 2 * n - 1] = 1.0
    x = np.linalg.solve(A, rhs)
    return x[:n], x[n:]


def test_base_only_matches_per_mode_solve(small):
    grid, basis, bc = small
    case = manufactured_problem(bc, grid, basis, kmax=2)
    sol = solve(case.problem, verify=False)
    F1 = basis.project(case.problem.coeffs.f1)
    F2 = basis.project(case.problem.coeffs.f2)
    G = basis.project(case.problem.g)
    worst = 0.0
    for i, om in enumerate(basis.omega):
        t, T = _dense_mode_solve(bc, grid.h1, grid.n1, om, F1[:, i], F2[:, i], G[i])
        worst = max(worst, np.max(np.abs(t - sol.theta[:, i])), np.max(np.abs(T - sol.cap_theta[:, i])))
    assert worst <= 1e-8


def test_zero_problem_gives_zero(small):
    grid, basis, bc = small
    cs = coefficient_set(bc, None, grid.shape, f1=0.0, f2=0.0)
    sol = solve(LinearProblem(grid, basis, cs, np.zeros(grid.cross_shape)))
    assert np.all(sol.theta == 0) and np.all(sol.cap_theta == 0)
    assert sol.residuals["L1_max"] == 0.0


def test_linearity(small, rng):
    grid, basis, bc = small
    case = manufactured_problem(bc, grid, basis, kmax=2)
    p = case.problem
    p2 = dataclasses.replace(p, coeffs=dataclasses.replace(p.coeffs, f1=3 * p.coeffs.f1, f2=3 * p.coeffs.f2),
                             g=3 * p.g)
    s1, s2 = solve(p, verify=False), solve(p2, verify=False)
    np.testing.assert_allclose(s2.theta, 3 * s1.theta, atol=1e-12)
    np.testing.assert_allclose(s2.cap_theta, 3 * s1.cap_theta, atol=1e-12)


def test_boundary_conditions_hold_exactly(small):
    grid, basis, bc = small
    case = manufactured_problem(bc, grid, basis, kmax=2)
    r = solve(case.problem).residuals
    for key in ("bc_psi_0", "bc_dpsi_0", "bc_dPsi_0", "bc_Psi_L", "bc_wall"):
        assert r[key] < 1e-10, key
    assert r["L1_projected_max"] < 1e-8


def test_residual_detects_spurious_mode(small):
    grid, basis, bc = small
    case = manufactured_problem(bc, grid, basis, kmax=2)
    sol = solve(case.problem, verify=False)
    clean = residual(sol, case.problem)
    sol.theta[:, basis.index(3, 1)] += 1e-3 * np.sin(np.pi * grid.x1 / grid.length)
    dirty = residual(sol, case.problem)
    assert dirty["L1_l2"] > 100 * clean["L1_l2"]


def test_perturbed_coefficients_second_order(bg_polytropic):
    basis = CrossSectionBasis(4, 17, 17)
    errs = []
    for n1 in (51, 101, 201):
        grid = DuctGrid(n1, 17, 17, 0.5)
        bc = base(bg_polytropic, grid.x1)
        th = np.zeros((n1, basis.size))
        th[:, basis.index(1, 1)] = 2e-3 * np.sin(np.pi * grid.x1)
        pert = Perturbation.from_modes(th, th, basis, grid.h1)
        case = manufactured_problem(bc, grid, basis, kmax=2, pert=pert)
        assert not case.problem.coeffs.frozen_to_base
        errs.append(case.errors(solve(case.problem, verify=False))["total"])
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_convergence_study_flat_in_m(bg_moderate):
    def factory(n1, m):
        grid = DuctGrid(n1, 17, 17, 0.5)
        b = CrossSectionBasis(m, 17, 17)
        return manufactured_problem(base(bg_moderate, grid.x1), grid, b, kmax=2).problem
    rows = convergence_study(factory, [2, 4], [41, 81], reference=(161, 4))
    by = {(r.m_max, r.n1): r for r in rows}
    assert by[(2, 81)].err == pytest.approx(by[(4, 81)].err, rel=1e-6)
    assert by[(4, 81)].order > 1.8


def test_problem_validation(small):
    grid, basis, bc = small
    cs = coefficient_set(bc, None, grid.shape, f1=0.0, f2=0.0)
    with pytest.raises(ValueError):
        LinearProblem(grid, basis, cs, np.zeros((3, 3)))
    x2, _ = grid.cross_mesh()
    with pytest.raises(ValueError):
        LinearProblem(grid, basis, cs, 0.5 * x2)
