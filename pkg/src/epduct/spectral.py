"""Neumann-Laplacian eigenbasis of the square (-1, 1)^2.

eta_{k,l}(x2, x3) = n_k n_l cos(k pi (x2+1)/2) cos(l pi (x3+1)/2) with
n_0 = 1/sqrt(2), n_j = 1 (j >= 1), so each mode has unit L^2 norm on the
square, and omega_{k,l} = (pi/2)^2 (k^2 + l^2).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import trapezoid_weights

HALF_PI = 0.5 * np.pi


def _norm(k):
    return np.where(np.asarray(k) == 0, 1.0 / np.sqrt(2.0), 1.0)


def _cos1d(k, x, der=0):
    """der-th derivative of n_k cos(k pi (x+1)/2)."""
    k = np.asarray(k, dtype=float)[..., None]
    kap = k * HALF_PI
    arg = kap * (np.asarray(x)[None, :] + 1.0)
    # d/dx cos = -kap sin, d2 = -kap^2 cos, ...
    phase = [np.cos, lambda a: -np.sin(a), lambda a: -np.cos(a), np.sin][der % 4]
    return _norm(k[..., 0])[..., None] * kap**der * phase(arg)


def eigenvalue(k: int, l: int) -> float:
    return HALF_PI**2 * (k * k + l * l)


def eigenpair(k: int, l: int):
    """(omega, eta) with eta a vectorised callable eta(x2, x3)."""
    if k < 0 or l < 0:
        raise ValueError("mode indices must be non-negative")

    def eta(x2, x3):
        x2, x3 = np.broadcast_arrays(np.asarray(x2, float), np.asarray(x3, float))
        return (_norm(k) * np.cos(k * HALF_PI * (x2 + 1.0))
                * _norm(l) * np.cos(l * HALF_PI * (x3 + 1.0)))

    return eigenvalue(k, l), eta


def mode_list(m_max: int) -> list[tuple[int, int]]:
    """All (k, l) with 0 <= k, l <= m_max, graded by omega then lexicographic."""
    modes = [(k, l) for k in range(m_max + 1) for l in range(m_max + 1)]
    return sorted(modes, key=lambda kl: (kl[0] ** 2 + kl[1] ** 2, kl))


@dataclass(frozen=True)
class CrossSectionBasis:
    """Truncated basis together with the quadrature in which it is sampled.

    ``rule="uniform"`` samples on the uniform (n2, n3) field grid with
    trapezoid weights; for cosine modes this is exact for every product of
    retained pairs as long as k + l < 2 (n - 1).  ``rule="gauss"`` uses a
    tensor Gauss-Legendre rule with ``n2`` points per axis.
    """

    m_max: int
    n2: int
    n3: int
    rule: str = "uniform"

    def __post_init__(self):
        if self.m_max < 0:
            raise ValueError("m_max must be >= 0")
        if self.rule not in ("uniform", "gauss"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.rule == "uniform" and 2 * self.m_max >= 2 * (min(self.n2, self.n3) - 1):
            raise ValueError("uniform grid too coarse to resolve the retained modes")

    @cached_property
    def modes(self) -> list[tuple[int, int]]:
        return mode_list(self.m_max)

    @property
    def size(self) -> int:
        return len(self.modes)

    @cached_property
    def k_index(self) -> np.ndarray:
        return np.array([m[0] for m in self.modes])

    @cached_property
    def l_index(self) -> np.ndarray:
        return np.array([m[1] for m in self.modes])

    @cached_property
    def omega(self) -> np.ndarray:
        return HALF_PI**2 * (self.k_index**2 + self.l_index**2)

    def index(self, k: int, l: int) -> int:
        return self.modes.index((k, l))

    @cached_property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        if self.rule == "uniform":
            return np.linspace(-1, 1, self.n2), np.linspace(-1, 1, self.n3)
        return np.polynomial.legendre.leggauss(self.n2)[0], np.polynomial.legendre.leggauss(self.n3)[0]

    @cached_property
    def weights(self) -> np.ndarray:
        if self.rule == "uniform":
            w2 = trapezoid_weights(self.n2, 2.0 / (self.n2 - 1))
            w3 = trapezoid_weights(self.n3, 2.0 / (self.n3 - 1))
        else:
            w2 = np.polynomial.legendre.leggauss(self.n2)[1]
            w3 = np.polynomial.legendre.leggauss(self.n3)[1]
        return np.outer(w2, w3)

    def values(self, d2: int = 0, d3: int = 0, x2=None, x3=None) -> np.ndarray:
        """d^(d2) / dx2 d^(d3) / dx3 of every mode, shape (M, len(x2), len(x3))."""
        if x2 is None:
            x2, x3 = self.nodes
        return self._table(d2, d3, tuple(np.asarray(x2, float)), tuple(np.asarray(x3, float)))

    def _table(self, d2, d3, x2, x3):
        key = (d2, d3, x2, x3)
        cache = self.__dict__.setdefault("_tables", {})
        if key not in cache:
            a = _cos1d(self.k_index, np.array(x2), d2)
            b = _cos1d(self.l_index, np.array(x3), d3)
            cache[key] = a[:, :, None] * b[:, None, :]
        return cache[key]

    def gram(self) -> np.ndarray:
        e = self.values().reshape(self.size, -1)
        return (e * self.weights.ravel()) @ e.T

    def project(self, field2d: np.ndarray) -> np.ndarray:
        """<field, eta_a> for every retained mode; leading axes are batched."""
        field2d = np.asarray(field2d, dtype=float)
        e = self.values() * self.weights
        return np.tensordot(field2d, e, axes=([-2, -1], [1, 2]))

    def reconstruct(self, coeffs: np.ndarray, x2=None, x3=None, d2: int = 0, d3: int = 0) -> np.ndarray:
        """sum_a coeffs_a d^alpha eta_a; leading axes of ``coeffs`` are batched."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] == 0:
            n2 = self.n2 if x2 is None else len(x2)
            n3 = self.n3 if x3 is None else len(x3)
            return np.zeros(coeffs.shape[:-1] + (n2, n3))
        return np.tensordot(coeffs, self.values(d2, d3, x2, x3), axes=([-1], [0]))
