"""One-dimensional supersonic background flow and its lift to the duct."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate as _integrate
from scipy.interpolate import CubicHermiteSpline

from .gas import GasLaw, SonicDegeneracyError, density, enthalpy


class OrbitClass(enum.Enum):
    PERIODIC = "periodic"
    FINITE_L1 = "finite_L1"


@dataclass(frozen=True)
class BackgroundParams:
    gas: GasLaw
    b0: float
    u0: float
    e0: float
    delta: float | None = None
    length_request: float = 1.0

    def __post_init__(self):
        us = self.gas.sonic_speed()
        if self.delta is None:
            object.__setattr__(self, "delta", 0.05 * us)
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.length_request > 0:
            raise ValueError("length_request must be positive")
        if not self.u0 > us:
            raise ValueError(f"u0={self.u0} is not supersonic (u_s={us})")
        if not 0.0 < self.b0 < self.gas.sonic_density():
            warnings.warn(
                f"b0={self.b0} outside (0, rho_s={self.gas.sonic_density():.6g}); "
                "the orbit classification may not apply",
                stacklevel=2,
            )

    @property
    def sonic_speed(self) -> float:
        return self.gas.sonic_speed()

    @property
    def u_floor(self) -> float:
        return self.gas.sonic_speed() + self.delta


def ode_rhs(params: BackgroundParams, u, e):
    g, j0 = params.gas.gamma, params.gas.j0
    den = u ** (g + 1.0) - g * j0 ** (g - 1.0)
    if np.any(np.abs(den) < 1e-14 * max(1.0, g * j0 ** (g - 1.0))):
        raise SonicDegeneracyError("u reached the sonic speed")
    return u**g * e / den, j0 / u - params.b0


def _h_integrand(t, params: BackgroundParams):
    g, j0, b0 = params.gas.gamma, params.gas.j0, params.b0
    us = params.sonic_speed
    return (j0 - b0 * t) * (1.0 - (us / t) ** (g + 1.0))


def h_potential(params: BackgroundParams, u: float, u_ref: float | None = None) -> float:
    """H(u) = int_{u_s}^u (b0/t^(g+1)) (t^(g+1) - u_s^(g+1)) (J0/b0 - t) dt.

    With ``u_ref`` the integral starts there instead of at u_s (used for
    increments along a trajectory).
    """
    if not u > 0:
        raise ValueError("h_potential needs u > 0")
    lo = params.sonic_speed if u_ref is None else u_ref
    if u == lo:
        return 0.0
    val, _ = _integrate.quad(_h_integrand, lo, u, args=(params,), epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def classify_orbit(params: BackgroundParams) -> OrbitClass:
    level = 0.5 * params.e0**2 - h_potential(params, params.u0)
    return OrbitClass.PERIODIC if level < 0 else OrbitClass.FINITE_L1


@dataclass(frozen=True)
class BackgroundSolution:
    params: BackgroundParams
    x1_grid: np.ndarray
    u: np.ndarray
    e: np.ndarray
    du: np.ndarray
    de: np.ndarray
    phi0: np.ndarray
    cap_phi0: np.ndarray
    l1_detected: float
    truncated: bool
    invariant_drift: float
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def rho(self) -> np.ndarray:
        return self.params.gas.j0 / self.u

    @property
    def length(self) -> float:
        return float(self.x1_grid[-1])

    def _spline(self, name):
        if name not in self._splines:
            x = self.x1_grid
            pairs = {"u": (self.u, self.du), "e": (self.e, self.de),
                     "phi0": (self.phi0, self.u), "cap_phi0": (self.cap_phi0, self.e)}
            y, dy = pairs[name]
            self._splines[name] = CubicHermiteSpline(x, y, dy)
        return self._splines[name]

    def sample(self, x1) -> dict:
        """Background quantities at arbitrary x1 (cubic Hermite, O(h^4)).

        Returns u, e, du, de, phi0, cap_phi0, rho.  Derivatives du, de are the
        ODE right-hand side at the interpolated state.
        """
        x1 = np.asarray(x1, dtype=float)
        if np.any(x1 < -1e-12) or np.any(x1 > self.length * (1 + 1e-12) + 1e-12):
            raise ValueError("sample points outside the background interval")
        u = self._spline("u")(x1)
        e = self._spline("e")(x1)
        du, de = ode_rhs(self.params, u, e)
        return {"x1": x1, "u": u, "e": e, "du": du, "de": de,
                "phi0": self._spline("phi0")(x1), "cap_phi0": self._spline("cap_phi0")(x1),
                "rho": self.params.gas.j0 / u}

    def lift_error(self) -> float:
        """max |rho~(Phi_bar, (u,0,0)) - J0/u| over the stored nodes."""
        q = np.stack([self.u, 0 * self.u, 0 * self.u], axis=-1)
        return float(np.max(np.abs(density(self.params.gas, self.cap_phi0, q) - self.rho)))


def _rhs4(params, y):
    u, e = y[0], y[1]
    du, de = ode_rhs(params, u, e)
    return np.array([du, de, u, e])


def _rk4_step(params, y, h):
    k1 = _rhs4(params, y)
    k2 = _rhs4(params, y + 0.5 * h * k1)
    k3 = _rhs4(params, y + 0.5 * h * k2)
    k4 = _rhs4(params, y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(params: BackgroundParams, step: float = 1e-3, length: float | None = None,
              drift: bool = True) -> BackgroundSolution:
    """March (u, E, phi_bar, Phi_bar) with classical RK4.

    Stops at ``length`` (default ``params.length_request``) or at the first
    point where u drops to u_s + delta, located by bisection inside the step.
    """
    length = params.length_request if length is None else length
    floor = params.u_floor
    if not params.u0 > floor:
        raise ValueError(f"u0={params.u0} does not exceed u_s + delta = {floor}")
    gas = params.gas
    nsteps = max(1, int(math.ceil(length / step - 1e-9)))
    h = length / nsteps
    y = np.array([params.u0, params.e0, 0.0,
                  0.5 * params.u0**2 + float(enthalpy(gas, gas.j0 / params.u0))])
    xs, ys = [0.0], [y]
    truncated = False
    for n in range(nsteps):
        y_new = _rk4_step(params, y, h)
        if y_new[0] - floor <= 0:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _rk4_step(params, y, mid)[0] - floor > 0:
                    lo = mid
                else:
                    hi = mid
            if lo > 1e-14 * h:
                xs.append(xs[-1] + lo)
                ys.append(_rk4_step(params, y, lo))
            truncated = True
            break
        xs.append((n + 1) * h)
        ys.append(y_new)
        y = y_new
    x = np.array(xs)
    if not truncated:
        x[-1] = length
    arr = np.array(ys)
    u, e = arr[:, 0], arr[:, 1]
    du, de = ode_rhs(params, u, e)
    drift_val = float("nan")
    if drift:
        drift_val = invariant_drift(params, u, e)
    return BackgroundSolution(params=params, x1_grid=x, u=u, e=e, du=du, de=de,
                              phi0=arr[:, 2], cap_phi0=arr[:, 3], l1_detected=float(x[-1]),
                              truncated=truncated, invariant_drift=drift_val)


def invariant_drift(params: BackgroundParams, u, e) -> float:
    """max |(E^2/2 - H(u)) - (E0^2/2 - H(u0))| along samples starting at (u0, E0)."""
    u = np.asarray(u, dtype=float)
    e = np.asarray(e, dtype=float)
    dh = np.empty_like(u)
    dh[0] = 0.0
    for i in range(1, len(u)):
        # cumulative increments keep each quadrature interval short
        dh[i] = dh[i - 1] + h_potential(params, u[i], u_ref=u[i - 1])
    level = 0.5 * (e**2 - e[0] ** 2) - dh
    return float(np.max(np.abs(level)))
