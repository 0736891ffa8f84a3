"""Algebraic closure of the potential-flow Euler-Poisson system.

All functions broadcast: ``z`` has shape ``S`` and ``p``/``q`` have shape
``S + (3,)``.  Scalars and plain 3-sequences are accepted as well.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class VacuumError(ValueError):
    """The density argument is non-positive (gamma > 1 branch)."""


class SonicDegeneracyError(ValueError):
    """``c^2 - q1^2`` is numerically zero, so A_ij and B are undefined."""


SONIC_RTOL = 1e-10


@dataclass(frozen=True)
class GasLaw:
    gamma: float
    j0: float

    def __post_init__(self):
        if not self.gamma >= 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")
        if not self.j0 > 0.0:
            raise ValueError(f"j0 must be > 0, got {self.j0}")

    @property
    def isothermal(self) -> bool:
        return self.gamma == 1.0

    def sonic_density(self) -> float:
        return (self.j0**2 / self.gamma) ** (1.0 / (self.gamma + 1.0))

    def sonic_speed(self) -> float:
        return self.j0 / self.sonic_density()


class Regime(enum.Enum):
    SUPERSONIC = "supersonic"
    SUBSONIC = "subsonic"
    SONIC = "sonic"


def _vec(q):
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (3,):
        raise ValueError(f"gradient arrays need a trailing axis of length 3, got {q.shape}")
    return q


def enthalpy(gas: GasLaw, rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise VacuumError("enthalpy needs rho > 0")
    if gas.isothermal:
        out = np.log(rho)
    else:
        g = gas.gamma
        out = g * (rho ** (g - 1.0) - 1.0) / (g - 1.0)
    return out[()]


def _bernoulli_arg(z, q):
    q = _vec(q)
    return np.asarray(z, dtype=float) - 0.5 * np.sum(q * q, axis=-1)


def density(gas: GasLaw, z, q):
    s = _bernoulli_arg(z, q)
    if gas.isothermal:
        return np.exp(s)[()]
    g = gas.gamma
    base = 1.0 + (g - 1.0) / g * s
    if np.any(base <= 0):
        raise VacuumError("density argument 1 + (gamma-1)/gamma (z - |q|^2/2) is not positive")
    return (base ** (1.0 / (g - 1.0)))[()]


def sound_speed_sq(gas: GasLaw, z, q):
    if gas.isothermal:
        # c^2 = gamma * rho^0 = 1; still validate the state
        _bernoulli_arg(z, q)
        return np.ones(np.broadcast_shapes(np.shape(z), _vec(q).shape[:-1]))[()]
    rho = density(gas, z, q)
    return gas.gamma * np.asarray(rho) ** (gas.gamma - 1.0)


def _sonic_denominator(c2, q1):
    den = c2 - q1 * q1
    bad = np.abs(den) < SONIC_RTOL * np.maximum(1.0, c2)
    if np.any(bad):
        raise SonicDegeneracyError("|c^2 - q1^2| below the sonic threshold")
    return den


def coeff_A(gas: GasLaw, z, q):
    """Matrix A_ij(z, q) with shape ``S + (3, 3)``.  A_11 is exactly 1."""
    q = _vec(q)
    c2 = np.asarray(sound_speed_sq(gas, z, q))
    den = _sonic_denominator(c2, q[..., 0])
    a = c2[..., None, None] * np.eye(3) - q[..., :, None] * q[..., None, :]
    a = a / den[..., None, None]
    a[..., 0, 0] = 1.0
    return a


def coeff_B(gas: GasLaw, z, p, q):
    p, q = _vec(p), _vec(q)
    c2 = np.asarray(sound_speed_sq(gas, z, q))
    den = _sonic_denominator(c2, q[..., 0])
    return (np.sum(p * q, axis=-1) / den)[()]


def coeff_B_partials(gas: GasLaw, z, p, q):
    """Analytic (dB/dq1, dB/dp1, dB/dz).

    Uses c^2 = gamma + (gamma-1)(z - |q|^2/2), so dc^2/dz = gamma-1 and
    dc^2/dq1 = -(gamma-1) q1.
    """
    p, q = _vec(p), _vec(q)
    g = gas.gamma
    c2 = np.asarray(sound_speed_sq(gas, z, q))
    q1 = q[..., 0]
    den = _sonic_denominator(c2, q1)
    pq = np.sum(p * q, axis=-1)
    d_q1 = p[..., 0] / den + pq * (g + 1.0) * q1 / den**2
    d_p1 = q1 / den
    d_z = -pq * (g - 1.0) / den**2
    return d_q1[()], d_p1[()], d_z[()]


def coeff_A22_partials(gas: GasLaw, z, q1):
    """(dA22/dz, dA22/dq1) along q = (q1, 0, 0)."""
    g = gas.gamma
    q = np.stack(np.broadcast_arrays(np.asarray(q1, float), 0.0, 0.0), axis=-1)
    c2 = np.asarray(sound_speed_sq(gas, z, q))
    q1 = q[..., 0]
    den = _sonic_denominator(c2, q1)
    d_z = -(g - 1.0) * q1**2 / den**2
    d_q1 = q1 * ((g - 1.0) * q1**2 + 2.0 * c2) / den**2
    return d_z[()], d_q1[()]


def density_partials(gas: GasLaw, z, q):
    """(d rho/dz, d rho/dq1) = (rho^(2-gamma)/gamma, -q1 rho^(2-gamma)/gamma)."""
    q = _vec(q)
    rho = np.asarray(density(gas, z, q))
    d_z = rho ** (2.0 - gas.gamma) / gas.gamma
    return d_z[()], (-q[..., 0] * d_z)[()]


def regime(gas: GasLaw, z, q, rtol: float = 1e-9):
    """Classify a single state.  ``Sonic`` when |q|^2 and c^2 agree to ``rtol``."""
    q = _vec(q)
    c2 = float(sound_speed_sq(gas, z, q))
    speed2 = float(np.sum(q * q))
    if abs(speed2 - c2) <= rtol * max(1.0, c2):
        return Regime.SONIC
    return Regime.SUPERSONIC if speed2 > c2 else Regime.SUBSONIC


def supersonic_margin(gas: GasLaw, z, q):
    """Pointwise (d_1 phi)^2 - c^2; positive in the hyperbolic regime."""
    q = _vec(q)
    return (q[..., 0] ** 2 - np.asarray(sound_speed_sq(gas, z, q)))[()]
