import numpy as np
import pytest

from epduct.boundary import (BoundaryData, background_traces, generate_synthetic, homogenize_psi,
                             load_boundary_data, save_boundary_data, sigma, validate_compatibility)
from epduct.coefficients import base
from epduct.grid import DuctGrid
from epduct.spectral import CrossSectionBasis


@pytest.fixture(scope="module")
def grid():
    return DuctGrid(21, 17, 17, 0.5)


def test_background_traces_have_zero_sigma(bg_moderate, grid):
    d = background_traces(bg_moderate, grid)
    assert sigma(d).sigma == 0.0
    assert validate_compatibility(d).passed
    assert d.cap_phi0_exit == pytest.approx(float(bg_moderate.sample(0.5)["cap_phi0"]))


def test_sigma_of_constant_ion_shift(bg_moderate, grid):
    d = background_traces(bg_moderate, grid)
    shifted = BoundaryData(grid, d.b + 3e-4, d.u_en, d.e_en, d.phi_ex, d.b0, d.u0, d.e0, d.cap_phi0_exit)
    rep = sigma(shifted)
    assert rep.sigma == pytest.approx(3e-4)
    assert rep.b_c2 == pytest.approx(3e-4)


def test_synthetic_modes_scale_linearly(bg_moderate, grid):
    modes = [{"target": "u_en", "k": 1, "l": 0, "amplitude": 1.0},
             {"target": "b", "k": 0, "l": 2, "amplitude": 0.5, "x1_mode": 1}]
    d = generate_synthetic(modes, bg_moderate, grid)
    s = sigma(d).sigma
    assert sigma(d.scaled(1e-3)).sigma == pytest.approx(1e-3 * s, rel=1e-6)
    assert validate_compatibility(d).passed
    # cosine amplitude is normalised at the corner
    assert d.g1[0, 0] == pytest.approx(1.0)


def test_synthetic_rejects_non_cosine(bg_moderate, grid):
    with pytest.raises(ValueError):
        generate_synthetic([{"target": "u_en", "k": 1, "l": 0, "amplitude": 1.0, "kind": "sin"}],
                           bg_moderate, grid)
    with pytest.raises(ValueError):
        generate_synthetic([{"target": "nope", "k": 1, "l": 0, "amplitude": 1.0}], bg_moderate, grid)


def test_compatibility_detects_wall_flux(bg_moderate, grid):
    d = background_traces(bg_moderate, grid)
    x2, _ = grid.cross_mesh()
    bad = BoundaryData(grid, d.b, d.u_en + 0.5 * x2, d.e_en, d.phi_ex,
                       d.b0, d.u0, d.e0, d.cap_phi0_exit)
    rep = validate_compatibility(bad)
    assert not rep.passed
    assert "dn_u_en" in rep.failures()


def test_homogenization_shift(bg_moderate, grid):
    modes = [{"target": "e_en", "k": 1, "l": 1, "amplitude": 1e-3},
             {"target": "phi_ex", "k": 2, "l": 0, "amplitude": 2e-3}]
    d = generate_synthetic(modes, bg_moderate, grid)
    basis = CrossSectionBasis(4, 17, 17)
    sh = homogenize_psi(d, basis, base(bg_moderate, grid.x1))
    np.testing.assert_allclose(sh.shift[-1], d.psi_ex, atol=1e-14)
    ds = (sh.shift[1] - sh.shift[0]) / grid.h1
    np.testing.assert_allclose(ds, d.g2, atol=1e-13)
    zero = homogenize_psi(background_traces(bg_moderate, grid), basis, base(bg_moderate, grid.x1))
    assert np.all(zero.df1 == 0) and np.all(zero.df2 == 0)


def test_io_roundtrip(bg_moderate, grid, tmp_path):
    d = generate_synthetic([{"target": "phi_ex", "k": 1, "l": 2, "amplitude": 1e-4}], bg_moderate, grid)
    path = save_boundary_data(d, tmp_path)
    back = load_boundary_data(path, bg_moderate, grid)
    for name in ("b", "u_en", "e_en", "phi_ex"):
        np.testing.assert_array_equal(getattr(back, name), getattr(d, name))
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header == "x1,x2,x3,value"


def test_shape_validation(grid):
    with pytest.raises(ValueError):
        BoundaryData(grid, np.zeros((2, 2, 2)), np.zeros(grid.cross_shape), np.zeros(grid.cross_shape),
                     np.zeros(grid.cross_shape), 0, 0, 0, 0)
