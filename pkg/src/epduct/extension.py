"""Quintic-weight reflection across the walls and mollification.

Beyond an endpoint ``b`` of an interval the extension is

    f_ext(b + s) = sum_k c_k f(b - s / k),   k = 1..5,

with weights chosen so that derivatives up to order 4 match at ``b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve


@dataclass(frozen=True)
class ExtensionWeights:
    c: tuple

    @property
    def as_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.c])

    def residual(self) -> float:
        """max_m |sum_k c_k (-1/k)^m - 1| over m = 0..4, in floating point."""
        c = self.as_array
        k = np.arange(1, 6, dtype=float)
        return float(max(abs(np.sum(c * (-1.0 / k) ** m) - 1.0) for m in range(5)))


def _solve_exact(mat, rhs):
    """Gauss-Jordan elimination over the rationals."""
    n = len(rhs)
    aug = [list(row) + [r] for row, r in zip(mat, rhs)]
    for col in range(n):
        piv = next(i for i in range(col, n) if aug[i][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        p = aug[col][col]
        aug[col] = [v / p for v in aug[col]]
        for i in range(n):
            if i != col and aug[i][col] != 0:
                f = aug[i][col]
                aug[i] = [vi - f * vc for vi, vc in zip(aug[i], aug[col])]
    return [aug[i][n] for i in range(n)]


def vandermonde() -> list[list[Fraction]]:
    """Row m: ((-1/k)^m) for k = 1..5."""
    return [[Fraction(-1, k) ** m for k in range(1, 6)] for m in range(5)]


def solve_weights() -> ExtensionWeights:
    sol = _solve_exact(vandermonde(), [Fraction(1)] * 5)
    if any(v.denominator != 1 for v in sol):
        raise ArithmeticError("extension weights are not integral")
    return ExtensionWeights(tuple(int(v) for v in sol))


WEIGHTS = solve_weights().as_array


def _lagrange_rows(t: np.ndarray, x0: float, h: float, n: int, npts: int = 6) -> np.ndarray:
    """Dense (len(t), n) matrix of local Lagrange interpolation at points t."""
    if n < npts:
        raise ValueError(f"need at least {npts} nodes along the extension axis, got {n}")
    rows = np.zeros((len(t), n))
    for r, ti in enumerate(t):
        pos = (ti - x0) / h
        s = int(np.clip(math.floor(pos) - (npts // 2 - 1), 0, n - npts))
        nodes = np.arange(s, s + npts)
        for i in range(npts):
            others = np.delete(nodes, i)
            rows[r, s + i] = np.prod((pos - others) / (nodes[i] - others))
    return rows


def extension_matrices(n: int, h: float, n_ext: int):
    """(low, high) matrices mapping the n samples on [x0, x0 + (n-1)h] to n_ext ghost values.

    ``low`` rows correspond to x0 - j h for j = n_ext..1, ``high`` rows to
    x_end + j h for j = 1..n_ext.
    """
    if n_ext == 0:
        return np.zeros((0, n)), np.zeros((0, n))
    width = (n - 1) * h
    if n_ext * h > 0.5 * width + 1e-12:
        raise ValueError("extension margin exceeds half the interval; insufficient resolution")
    s = h * np.arange(1, n_ext + 1)
    high = np.zeros((n_ext, n))
    low = np.zeros((n_ext, n))
    for k, ck in enumerate(WEIGHTS, start=1):
        high += ck * _lagrange_rows(width - s / k, 0.0, h, n)
        low += ck * _lagrange_rows(s / k, 0.0, h, n)
    return low[::-1], high


def extend(field: np.ndarray, axis: int, h: float, n_ext: int) -> np.ndarray:
    """Append ``n_ext`` reflected ghost layers on both sides of ``axis``."""
    f = np.moveaxis(np.asarray(field, float), axis, 0)
    low, high = extension_matrices(f.shape[0], h, n_ext)
    lo = np.tensordot(low, f, axes=(1, 0))
    hi = np.tensordot(high, f, axes=(1, 0))
    return np.moveaxis(np.concatenate([lo, f, hi], axis=0), 0, axis)


def extend_to(field: np.ndarray, axis: int, h: float, margin: float) -> np.ndarray:
    """Extension whose ghost layers cover at least ``margin`` beyond each face."""
    return extend(field, axis, h, int(math.ceil(margin / h - 1e-9)))


@dataclass(frozen=True)
class MollifierSpec:
    """Radial bump exp(-1 / (1 - |x/r|^2)) of support radius r."""

    r: float

    def __post_init__(self):
        if not 0.0 < self.r < 0.25:
            raise ValueError("mollification radius must lie in (0, 1/4)")

    def half_widths(self, spacing) -> tuple[int, ...]:
        return tuple(int(math.floor(self.r / h * (1 - 1e-12))) for h in spacing)

    def kernel(self, spacing) -> np.ndarray:
        """Kernel samples on the node lattice, unit discrete mass (sum * cell volume)."""
        hw = self.half_widths(spacing)
        axes = [h * np.arange(-m, m + 1) for h, m in zip(spacing, hw)]
        mesh = np.meshgrid(*axes, indexing="ij")
        s2 = sum(x * x for x in mesh) / self.r**2
        with np.errstate(divide="ignore", over="ignore"):
            k = np.where(s2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - s2, 1e-300)), 0.0)
        cell = float(np.prod(spacing))
        return k / (k.sum() * cell)


def mollify(field: np.ndarray, spacing, spec: MollifierSpec, axes=None) -> np.ndarray:
    """Extend every listed axis by the kernel half-width, convolve, restrict.

    ``axes`` defaults to all axes; axes left out are neither extended nor
    smoothed.
    """
    field = np.asarray(field, float)
    axes = tuple(range(field.ndim)) if axes is None else tuple(axes)
    sub = tuple(spacing[ax] for ax in axes)
    hw = dict(zip(axes, spec.half_widths(sub)))
    ext = field
    for ax in axes:
        ext = extend(ext, ax, spacing[ax], hw[ax])
    kern = spec.kernel(sub).reshape([2 * hw[ax] + 1 if ax in hw else 1 for ax in range(field.ndim)])
    return fftconvolve(ext, kern, mode="valid") * float(np.prod(sub))


def smooth_sources(f1: np.ndarray, f2: np.ndarray, spacing, spec: MollifierSpec):
    return mollify(f1, spacing, spec), mollify(f2, spacing, spec)
