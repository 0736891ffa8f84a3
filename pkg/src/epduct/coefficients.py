"""Frozen coefficients and nonlinear sources of the perturbation system.

With (psi, Psi) = (phi - phi0, Phi - Phi0) the system reads

    sum a_ij psi_ij + a1 psi_1 + b1 Psi_1 + b2 Psi = f1
    Lap Psi - h1 Psi - h2 psi_1                   = f2

where the barred coefficients are partial derivatives of B and rho at the
background state and a_ij = A_ij(Phi0 + W, grad phi0 + grad phi).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .background import BackgroundSolution
from .gas import (GasLaw, SonicDegeneracyError, VacuumError, coeff_A, coeff_A22_partials, coeff_B,
                  coeff_B_partials, density, density_partials, sound_speed_sq)
from .grid import DuctGrid, deriv

EPS_BAR = 1e-2


@dataclass(frozen=True)
class BaseCoefficients:
    """Background coefficients sampled at the nodes ``x1``."""

    gas: GasLaw
    x1: np.ndarray
    u: np.ndarray
    e: np.ndarray
    du: np.ndarray
    cap_phi0: np.ndarray
    a22_bar: np.ndarray
    da22_bar: np.ndarray
    a1_bar: np.ndarray
    b1_bar: np.ndarray
    b2_bar: np.ndarray
    h1_bar: np.ndarray
    h2_bar: np.ndarray

    @property
    def a_bar(self) -> np.ndarray:
        a = np.zeros(self.x1.shape + (3, 3))
        a[:, 0, 0] = 1.0
        a[:, 1, 1] = a[:, 2, 2] = self.a22_bar
        return a

    @property
    def mu1(self) -> float:
        """Largest mu with mu <= a11 = 1 and mu <= -a22 <= 1/mu on the sampled nodes."""
        m = -self.a22_bar
        return float(min(1.0, m.min(), 1.0 / m.max()))

    @property
    def z0(self) -> np.ndarray:
        return self.cap_phi0

    def q0(self) -> np.ndarray:
        return np.stack([self.u, 0 * self.u, 0 * self.u], axis=-1)

    def p0(self) -> np.ndarray:
        return np.stack([self.e, 0 * self.e, 0 * self.e], axis=-1)


def base(bg: BackgroundSolution, x1=None) -> BaseCoefficients:
    """Closed-form partials of A, B and rho at the background, per x1 node."""
    s = bg.sample(bg.x1_grid if x1 is None else x1)
    gas = bg.params.gas
    u, e, z = s["u"], s["e"], s["cap_phi0"]
    zero = np.zeros_like(u)
    q = np.stack([u, zero, zero], axis=-1)
    p = np.stack([e, zero, zero], axis=-1)
    a = coeff_A(gas, z, q)
    a1, b1, b2 = coeff_B_partials(gas, z, p, q)
    h1, h2 = density_partials(gas, z, q)
    d_z, d_q1 = coeff_A22_partials(gas, z, u)
    return BaseCoefficients(gas=gas, x1=np.asarray(s["x1"], float), u=u, e=e, du=s["du"], cap_phi0=z,
                            a22_bar=a[..., 1, 1], da22_bar=d_z * e + d_q1 * s["du"],
                            a1_bar=np.asarray(a1), b1_bar=np.asarray(b1), b2_bar=np.asarray(b2),
                            h1_bar=np.asarray(h1), h2_bar=np.asarray(h2))


@dataclass(frozen=True)
class Perturbation:
    """(xi, eta, zeta) = (W, grad W, grad phi) on the field grid."""

    xi: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray

    @classmethod
    def zero(cls, shape) -> "Perturbation":
        return cls(np.zeros(shape), np.zeros(tuple(shape) + (3,)), np.zeros(tuple(shape) + (3,)))

    @classmethod
    def from_fields(cls, w: np.ndarray, phi: np.ndarray, grid: DuctGrid) -> "Perturbation":
        """Centered differences, one-sided at the boundary."""
        def grad(f):
            return np.stack([deriv(f, h, ax) for ax, h in enumerate(grid.spacing)], axis=-1)
        return cls(np.asarray(w, float), grad(w), grad(phi))

    @classmethod
    def from_modes(cls, theta: np.ndarray, cap_theta: np.ndarray, basis, h1: float) -> "Perturbation":
        """Cross-section derivatives taken in the basis, x1 derivatives by differences."""
        def grad(c):
            c1 = deriv(c, h1, 0)
            return np.stack([basis.reconstruct(c1), basis.reconstruct(c, d2=1),
                             basis.reconstruct(c, d3=1)], axis=-1)
        return cls(basis.reconstruct(cap_theta), grad(cap_theta), grad(theta))

    def scaled(self, lam: float) -> "Perturbation":
        return Perturbation(lam * self.xi, lam * self.eta, lam * self.zeta)


def _bcast(v, ndim):
    return v.reshape(v.shape + (1,) * (ndim - 1))


def _state(base: BaseCoefficients, pert: Perturbation):
    nd = pert.xi.ndim
    z = _bcast(base.z0, nd) + pert.xi
    q = base.q0().reshape((-1,) + (1,) * (nd - 1) + (3,)) + pert.zeta
    p = base.p0().reshape((-1,) + (1,) * (nd - 1) + (3,)) + pert.eta
    return z, p, q


def _locate_failure(gas, z, q):
    """Index of the worst node for a vacuum/sonic failure message."""
    s = z - 0.5 * np.sum(q * q, axis=-1)
    if not gas.isothermal:
        arg = 1.0 + (gas.gamma - 1.0) / gas.gamma * s
        if np.any(arg <= 0):
            return "vacuum", np.unravel_index(np.argmin(arg), arg.shape)
        c2 = gas.gamma * arg
    else:
        c2 = np.ones_like(s)
    den = np.abs(c2 - q[..., 0] ** 2)
    return "sonic", np.unravel_index(np.argmin(den), den.shape)


def perturbed(base: BaseCoefficients, pert: Perturbation) -> np.ndarray:
    """a_ij = A_ij(Phi0 + xi, grad phi0 + zeta), shape field + (3, 3)."""
    z, _, q = _state(base, pert)
    try:
        return coeff_A(base.gas, z, q)
    except (VacuumError, SonicDegeneracyError) as exc:
        kind, idx = _locate_failure(base.gas, z, q)
        raise type(exc)(f"{kind} degeneracy at node {tuple(int(i) for i in idx)}") from exc


def source_f1(base: BaseCoefficients, pert: Perturbation) -> np.ndarray:
    """-[B]_{t=0}^{1} + a1 zeta_1 + b1 eta_1 + b2 xi (endpoint difference)."""
    nd = pert.xi.ndim
    z, p, q = _state(base, pert)
    b_new = coeff_B(base.gas, z, p, q)
    b_old = _bcast(coeff_B(base.gas, base.z0, base.p0(), base.q0()), nd)
    return (-(b_new - b_old) + _bcast(base.a1_bar, nd) * pert.zeta[..., 0]
            + _bcast(base.b1_bar, nd) * pert.eta[..., 0] + _bcast(base.b2_bar, nd) * pert.xi)


def source_f2(base: BaseCoefficients, pert: Perturbation, db=0.0) -> np.ndarray:
    """[rho]_{t=0}^{1} - (b - b0) - h1 xi - h2 zeta_1."""
    nd = pert.xi.ndim
    z, _, q = _state(base, pert)
    r_new = density(base.gas, z, q)
    r_old = _bcast(density(base.gas, base.z0, base.q0()), nd)
    return (r_new - r_old - db - _bcast(base.h1_bar, nd) * pert.xi
            - _bcast(base.h2_bar, nd) * pert.zeta[..., 0])


@dataclass(frozen=True)
class CoefficientSet:
    a: np.ndarray
    base: BaseCoefficients
    f1: np.ndarray
    f2: np.ndarray
    provenance: dict = field(default_factory=dict)
    c2: np.ndarray | None = None
    den: np.ndarray | None = None

    @property
    def frozen_to_base(self) -> bool:
        return bool(self.provenance.get("base_only", False))


def coefficient_set(base: BaseCoefficients, pert: Perturbation | None, shape, db=0.0,
                    provenance: dict | None = None, f1=None, f2=None) -> CoefficientSet:
    """Coefficients and sources for one linear solve.

    ``pert=None`` freezes the coefficients to the background; in that case
    f1 and f2 default to zero and -(b - b0).
    """
    prov = dict(provenance or {})
    if pert is None:
        pert = Perturbation.zero(shape)
        prov.setdefault("base_only", True)
    a = perturbed(base, pert)
    if f1 is None:
        f1 = source_f1(base, pert)
    if f2 is None:
        f2 = source_f2(base, pert, db)
    z, _, q = _state(base, pert)
    c2 = np.broadcast_to(sound_speed_sq(base.gas, z, q), z.shape)
    den = c2 - q[..., 0] ** 2
    return CoefficientSet(a=a, base=base, f1=np.broadcast_to(f1, shape).copy(),
                          f2=np.broadcast_to(f2, shape).copy(), provenance=prov, c2=c2, den=den)


@dataclass
class AuditItem:
    value: float
    worst: tuple
    passed: bool

    def as_dict(self):
        return {"value": self.value, "worst_node": list(self.worst), "passed": self.passed}


def _worst(arr):
    idx = np.unravel_index(int(np.argmax(arr)), arr.shape)
    return float(arr[idx]), tuple(int(i) for i in idx)


def audit(cset: CoefficientSet, tol: float = 1e-10, flux_tol: float = 1e-6) -> dict:
    """Symmetry, a11 = 1, spectrum of -[a]_{23} and the wall-normal fluxes."""
    a = cset.a
    out: dict[str, AuditItem] = {}
    v, w = _worst(np.max(np.abs(a - np.swapaxes(a, -1, -2)), axis=(-2, -1)))
    out["symmetry"] = AuditItem(v, w, v <= tol)
    v, w = _worst(np.abs(a[..., 0, 0] - 1.0))
    out["a11_unit"] = AuditItem(v, w, v <= tol)
    mu = cset.base.mu1
    lam = np.linalg.eigvalsh(-a[..., 1:, 1:])
    lo, hi = lam[..., 0], lam[..., 1]
    v, w = _worst(-lo)
    out["min_eig_23"] = AuditItem(float(lo.min()), w, bool(lo.min() >= mu / 4))
    v, w = _worst(hi)
    out["max_eig_23"] = AuditItem(v, w, v <= 4 / mu)
    if a.ndim == 5:
        def faces(arr, i, j):
            comp = arr[..., i, j] if i is not None else arr
            return comp[:, [0, -1], :], comp[:, :, [0, -1]]
        # faces x2 = +-1 (n = +-e2) and x3 = +-1 (n = +-e3)
        f2, _ = faces(a, 0, 1)
        _, f3 = faces(a, 0, 2)
        v = float(max(np.abs(f2).max(), np.abs(f3).max()))
        out["wall_flux_row1"] = AuditItem(v, (), v <= flux_tol)
        if cset.c2 is not None:
            p2, p3 = faces(cset.c2 / cset.den, None, None)
            a22, _ = faces(a, 1, 1)
            _, a33 = faces(a, 2, 2)
            o2, _ = faces(a, 2, 1)
            _, o3 = faces(a, 1, 2)
            v = float(max(np.abs(a22 - p2).max(), np.abs(a33 - p3).max(),
                          np.abs(o2).max(), np.abs(o3).max()))
            out["wall_flux_rows23"] = AuditItem(v, (), v <= flux_tol)
    return out


def audit_passed(report: dict) -> bool:
    return all(item.passed for item in report.values())
