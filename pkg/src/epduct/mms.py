"""Manufactured solutions for the linear solver and the energy identity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import BaseCoefficients, Perturbation, coefficient_set
from .grid import DuctGrid
from .linear import LinearProblem, _apply_ops
from .spectral import CrossSectionBasis


@dataclass(frozen=True)
class ManufacturedCase:
    problem: LinearProblem
    theta: np.ndarray
    cap_theta: np.ndarray

    def errors(self, sol) -> dict:
        """Discrete L2 errors of psi, Psi (Parseval across, trapezoid along x1)."""
        g = sol.grid
        w = np.full(g.n1, g.h1)
        w[0] = w[-1] = 0.5 * g.h1
        e1 = float(np.sqrt(w @ np.sum((sol.theta - self.theta) ** 2, axis=1)))
        e2 = float(np.sqrt(w @ np.sum((sol.cap_theta - self.cap_theta) ** 2, axis=1)))
        return {"psi": e1, "Psi": e2, "total": float(np.hypot(e1, e2))}


def profiles(x, length):
    """theta-like and Theta-like x1 profiles with their first two derivatives.

    s(x) = sin(k x) vanishes at 0; c(x) = cos(k x) has c'(0) = 0 and c(L) = 0.
    """
    k = 0.5 * np.pi / length
    s = (np.sin(k * x), k * np.cos(k * x), -k * k * np.sin(k * x))
    c = (np.cos(k * x), -k * np.sin(k * x), -k * k * np.cos(k * x))
    return s, c


def manufactured_problem(base: BaseCoefficients, grid: DuctGrid, basis: CrossSectionBasis,
                         kmax: int = 3, pert: Perturbation | None = None) -> ManufacturedCase:
    """Band-limited psi*, Psi* in the modes (k, l) <= (kmax, kmax), sup-normalised to 1."""
    if kmax > basis.m_max:
        raise ValueError("manufactured modes exceed the basis")
    M = basis.size
    alpha = np.zeros(M)
    beta = np.zeros(M)
    for i, (k, l) in enumerate(basis.modes):
        if k <= kmax and l <= kmax:
            alpha[i] = 1.0 / ((1 + k) * (1 + l))
            beta[i] = (-1.0) ** (k + l) / (1 + k + l)
    x = grid.x1
    (s0, s1, s2), (c0, c1, c2) = profiles(x, grid.length)
    # unit sup-norm of each field
    alpha /= np.max(np.abs(basis.reconstruct(alpha)))
    beta /= np.max(np.abs(basis.reconstruct(beta)))
    th = [np.outer(v, alpha) for v in (s0, s1, s2)]
    Th = [np.outer(v, beta) for v in (c0, c1, c2)]
    cs = coefficient_set(base, pert, grid.shape, f1=0.0, f2=0.0)
    sl = slice(None)
    f1, f2 = _apply_ops(basis, cs, base, sl, th[0], th[1], th[2], Th[0], Th[1], Th[2])
    cs = coefficient_set(base, pert, grid.shape, f1=f1, f2=f2,
                         provenance={"manufactured": True, "kmax": kmax})
    g = basis.reconstruct(th[1][0])
    return ManufacturedCase(LinearProblem(grid, basis, cs, g), th[0], Th[0])
