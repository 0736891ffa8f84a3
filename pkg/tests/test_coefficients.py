import numpy as np
import pytest

from epduct.coefficients import (Perturbation, audit, audit_passed, base, coefficient_set, perturbed,
                                 source_f1, source_f2)
from epduct.gas import coeff_B
from epduct.grid import DuctGrid
from epduct.spectral import CrossSectionBasis


@pytest.fixture(scope="module")
def setup(bg_polytropic):
    grid = DuctGrid(41, 17, 17, 0.5)
    basis = CrossSectionBasis(4, 17, 17)
    bc = base(bg_polytropic, grid.x1)
    th = np.zeros((grid.n1, basis.size))
    Th = np.zeros_like(th)
    th[:, basis.index(1, 0)] = np.sin(np.pi * grid.x1)
    Th[:, basis.index(0, 1)] = np.cos(np.pi * grid.x1)
    th[:, basis.index(2, 1)] = 0.5 * grid.x1**2
    return grid, basis, bc, th, Th


def test_background_structure(setup, bg_polytropic):
    grid, _, bc, _, _ = setup
    a = bc.a_bar
    assert np.all(a[:, 0, 0] == 1.0)
    assert np.all(bc.a22_bar < 0)
    assert 0 < bc.mu1 <= 1
    # along the background u' = -B(Phi0, (E, 0, 0), (u, 0, 0))
    bbar = coeff_B(bc.gas, bc.z0, bc.p0(), bc.q0())
    np.testing.assert_allclose(bc.du, -bbar, rtol=1e-10, atol=1e-14)


def test_zero_perturbation_reduces_to_background(setup):
    grid, _, bc, _, _ = setup
    z = Perturbation.zero(grid.shape)
    a = perturbed(bc, z)
    np.testing.assert_allclose(a, np.broadcast_to(bc.a_bar[:, None, None], a.shape), atol=1e-15)
    assert np.all(source_f1(bc, z) == 0)
    assert np.all(source_f2(bc, z) == 0)
    cs = coefficient_set(bc, None, grid.shape)
    assert cs.frozen_to_base


def test_sources_are_quadratic(setup):
    grid, basis, bc, th, Th = setup
    pert = Perturbation.from_modes(th, Th, basis, grid.h1)
    r1, r2 = [], []
    for lam in (1e-3, 5e-4, 2.5e-4):
        p = pert.scaled(lam)
        r1.append(np.max(np.abs(source_f1(bc, p))))
        r2.append(np.max(np.abs(source_f2(bc, p))))
    for r in (r1, r2):
        ratios = np.array(r[:-1]) / np.array(r[1:])
        np.testing.assert_allclose(ratios, 4.0, rtol=1e-2)


def test_modal_and_grid_gradients_agree(setup):
    grid, basis, bc, th, Th = setup
    pm = Perturbation.from_modes(th, Th, basis, grid.h1)
    pf = Perturbation.from_fields(basis.reconstruct(Th), basis.reconstruct(th), grid)
    inner = (slice(1, -1), slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(pf.zeta[inner], pm.zeta[inner], atol=0.2)
    np.testing.assert_allclose(pm.xi, pf.xi)


def test_audit_passes_for_slip_perturbation(setup):
    grid, basis, bc, th, Th = setup
    pert = Perturbation.from_modes(1e-3 * th, 1e-3 * Th, basis, grid.h1)
    rep = audit(coefficient_set(bc, pert, grid.shape))
    assert audit_passed(rep), {k: v.as_dict() for k, v in rep.items()}


def test_audit_flags_wall_flux(setup):
    grid, basis, bc, _, _ = setup
    x2 = grid.x2[None, :, None] * np.ones(grid.shape)
    pert = Perturbation.from_fields(np.zeros(grid.shape), 1e-2 * x2, grid)
    rep = audit(coefficient_set(bc, pert, grid.shape))
    assert not rep["wall_flux_row1"].passed


def test_failure_names_the_node(setup):
    grid, basis, bc, _, _ = setup
    bad = Perturbation.zero(grid.shape)
    xi = np.zeros(grid.shape)
    xi[3, 4, 5] = -50.0
    with pytest.raises(ValueError, match=r"node \(3, 4, 5\)"):
        perturbed(bc, Perturbation(xi, bad.eta, bad.zeta))
