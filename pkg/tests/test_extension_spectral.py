import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epduct.extension import (MollifierSpec, extend, extension_matrices, mollify, smooth_sources,
                              solve_weights)
from epduct.grid import DuctGrid, one_sided_normal, sobolev_norm, trapezoid_weights
from epduct.spectral import CrossSectionBasis, eigenpair, eigenvalue, mode_list


def test_weights_satisfy_moment_conditions():
    w = solve_weights()
    c = np.array(w.c, float)
    for m in range(5):
        assert np.sum(c * (-1.0 / np.arange(1, 6)) ** m) == pytest.approx(1.0, abs=1e-12)
    assert w.residual() < 1e-12


def test_extension_reproduces_quartics_on_both_sides():
    x = np.linspace(0.0, 1.0, 51)
    h = x[1] - x[0]
    poly = 1 + 2 * x - 3 * x**2 + 0.5 * x**3 - x**4
    e = extend(poly, 0, h, 8)
    xe = np.concatenate([x[0] - h * np.arange(8, 0, -1), x, x[-1] + h * np.arange(1, 9)])
    ex = 1 + 2 * xe - 3 * xe**2 + 0.5 * xe**3 - xe**4
    np.testing.assert_allclose(e, ex, atol=1e-10)


def test_extension_margin_limit():
    with pytest.raises(ValueError):
        extension_matrices(11, 0.1, 6)


def test_mollifier_unit_mass_and_linear_reproduction():
    spec = MollifierSpec(0.1)
    spacing = (0.02, 0.025)
    k = spec.kernel(spacing)
    assert k.sum() * np.prod(spacing) == pytest.approx(1.0)
    x = np.linspace(0, 1, 51)[:, None]
    y = np.linspace(-1, 1, 81)[None, :]
    f = 2 + 3 * x - y + 0 * x * y
    np.testing.assert_allclose(mollify(f, spacing, spec), f, atol=1e-10)
    with pytest.raises(ValueError):
        MollifierSpec(0.3)


def test_mollify_smooths_and_converges():
    x = np.linspace(0, 1, 201)
    h = x[1] - x[0]
    f = np.sin(3 * x)
    errs = []
    for r in (0.08, 0.04, 0.02):
        g = mollify(f, (h,), MollifierSpec(r))
        errs.append(np.max(np.abs(g - f)))
    assert errs[0] > errs[1] > errs[2]
    a, b = smooth_sources(f, 2 * f, (h,), MollifierSpec(0.02))
    np.testing.assert_allclose(b, 2 * a)


def test_eigenpairs():
    lam, eta = eigenpair(2, 1)
    assert lam == pytest.approx(np.pi**2 / 4 * 5)
    assert eigenvalue(0, 0) == 0.0
    x = np.linspace(-1, 1, 7)
    assert np.allclose(eigenpair(0, 0)[1](x, x), 0.5)
    assert len(mode_list(8)) == 81


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5), st.integers(0, 5))
def test_modes_satisfy_neumann_and_eigen_equation(k, l):
    b = CrossSectionBasis(5, 41, 41)
    i = b.index(k, l)
    v = b.values()[i]
    lap = b.values(2, 0)[i] + b.values(0, 2)[i]
    np.testing.assert_allclose(-lap, b.omega[i] * v, atol=1e-10)
    for ax, side in ((0, 0), (0, 1), (1, 0), (1, 1)):
        d = b.values(1, 0)[i] if ax == 0 else b.values(0, 1)[i]
        edge = d[[0, -1][side], :] if ax == 0 else d[:, [0, -1][side]]
        assert np.max(np.abs(edge)) < 1e-12


def test_project_reconstruct_roundtrip(rng):
    b = CrossSectionBasis(8, 33, 33)
    c = rng.normal(size=(3, b.size))
    np.testing.assert_allclose(b.project(b.reconstruct(c)), c, atol=1e-12)


def test_basis_resolution_guard():
    with pytest.raises(ValueError):
        CrossSectionBasis(8, 9, 9)


def test_grid_helpers():
    g = DuctGrid(11, 9, 9, 2.0)
    assert g.h1 == pytest.approx(0.2)
    assert g.volume_weights().sum() == pytest.approx(8.0)
    assert trapezoid_weights(5, 0.25).sum() == pytest.approx(1.0)
    x = np.linspace(-1, 1, 41)
    f = np.cos(np.pi * (x + 1) / 2)
    assert abs(float(one_sided_normal(f, x[1] - x[0], 0, 1))) < 1e-2
    # H^k proxy of a constant is its L2 norm
    c = np.full((11, 9, 9), 2.0)
    assert sobolev_norm(c, g.spacing, 2) == pytest.approx(np.sqrt(4 * 8.0))
