import numpy as np
import pytest

from epduct.background import (BackgroundParams, OrbitClass, classify_orbit, h_potential, integrate,
                               invariant_drift, ode_rhs)
from epduct.gas import GasLaw


def test_constant_solution_is_flat():
    p = BackgroundParams(GasLaw(1.0, 0.05), 0.025, 2.0, 0.0, length_request=1.0)
    bg = integrate(p, 1e-2)
    np.testing.assert_allclose(bg.u, 2.0, atol=1e-14)
    np.testing.assert_allclose(bg.e, 0.0, atol=1e-14)
    assert not bg.truncated
    np.testing.assert_allclose(bg.rho, 0.025, rtol=1e-14)


def test_periodic_orbit_reaches_requested_length():
    p = BackgroundParams(GasLaw(1.0, 1.0), 0.5, 2.0, 0.1, length_request=2.0)
    assert classify_orbit(p) is OrbitClass.PERIODIC
    bg = integrate(p, 1e-3)
    assert bg.l1_detected == pytest.approx(2.0)
    assert bg.invariant_drift <= 1e-12
    assert bg.lift_error() <= 1e-12


def test_sonic_approach_truncates():
    p = BackgroundParams(GasLaw(1.0, 1.0), 0.5, 1.5, -1.0, length_request=5.0)
    assert classify_orbit(p) is OrbitClass.FINITE_L1
    bg = integrate(p, 1e-3)
    assert bg.truncated
    assert bg.l1_detected < 5.0
    # stops at u = u_s + delta up to the bisection tolerance
    assert bg.u[-1] == pytest.approx(p.u_floor, abs=1e-8)
    assert np.all(bg.u > p.u_floor - 1e-8)


def test_fourth_order_drift_above_roundoff():
    """RK4: the invariant error scales like h^4 while it is above the roundoff floor."""
    p = BackgroundParams(GasLaw(1.0, 1.0), 0.5, 2.0, 0.1, length_request=2.0)
    d = [integrate(p, h).invariant_drift for h in (8e-2, 4e-2, 2e-2)]
    orders = np.log2(np.array(d[:-1]) / np.array(d[1:]))
    assert np.all(orders > 3.5)


def test_rhs_identity_and_energy():
    # E' = rho - b0 and u' = E / (u (1 - c^2/u^2)) for the isothermal gas
    p = BackgroundParams(GasLaw(1.0, 1.0), 0.5, 2.0, 0.1)
    du, de = ode_rhs(p, np.array([2.0]), np.array([0.1]))
    assert float(de[0]) == pytest.approx(0.5 - 0.5)
    assert float(du[0]) == pytest.approx(0.1 * 2.0 / (4.0 - 1.0))
    # H(u) relative to u itself is zero; invariant along a constant orbit vanishes
    assert h_potential(p, 1.7, 1.7) == pytest.approx(0.0)
    assert invariant_drift(p, np.full(5, 2.0), np.full(5, 0.1)) == pytest.approx(0.0, abs=1e-15)


def test_sample_interpolates_stored_nodes():
    p = BackgroundParams(GasLaw(1.4, 0.05), 0.025, 2.0, 0.01, length_request=1.0)
    bg = integrate(p, 1e-3)
    s = bg.sample(bg.x1_grid[::50])
    np.testing.assert_allclose(s["u"], bg.u[::50], rtol=1e-12)
    with pytest.raises(ValueError):
        bg.sample(np.array([2.0]))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        integrate(BackgroundParams(GasLaw(1.0, 1.0), 0.5, 1.0, 0.0))
    with pytest.raises(ValueError):
        BackgroundParams(GasLaw(1.0, 1.0), 0.5, 2.0, 0.0, delta=-1.0)
