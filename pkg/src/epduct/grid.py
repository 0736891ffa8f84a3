"""Uniform tensor grid on (0, L) x (-1, 1)^2 and finite-difference helpers."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class DuctGrid:
    n1: int
    n2: int
    n3: int
    length: float

    def __post_init__(self):
        if self.n1 < 3:
            raise ValueError("n1 must be >= 3")
        if self.n2 < 5 or self.n3 < 5:
            raise ValueError("n2, n3 must be >= 5")
        if not self.length > 0:
            raise ValueError("length must be positive")

    @cached_property
    def x1(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n1)

    @cached_property
    def x2(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n2)

    @cached_property
    def x3(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n3)

    @property
    def h1(self) -> float:
        return self.length / (self.n1 - 1)

    @property
    def h2(self) -> float:
        return 2.0 / (self.n2 - 1)

    @property
    def h3(self) -> float:
        return 2.0 / (self.n3 - 1)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return (self.h1, self.h2, self.h3)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def cross_shape(self) -> tuple[int, int]:
        return (self.n2, self.n3)

    def mesh(self):
        return np.meshgrid(self.x1, self.x2, self.x3, indexing="ij")

    def cross_mesh(self):
        return np.meshgrid(self.x2, self.x3, indexing="ij")

    def with_n1(self, n1: int) -> "DuctGrid":
        return DuctGrid(n1, self.n2, self.n3, self.length)

    def volume_weights(self) -> np.ndarray:
        w = [trapezoid_weights(n, h) for n, h in zip(self.shape, self.spacing)]
        return w[0][:, None, None] * w[1][None, :, None] * w[2][None, None, :]

    def cross_weights(self) -> np.ndarray:
        return np.outer(trapezoid_weights(self.n2, self.h2), trapezoid_weights(self.n3, self.h3))


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def deriv(f: np.ndarray, h: float, axis: int, order: int = 1) -> np.ndarray:
    """Repeated 2nd-order centered differences, one-sided at the ends."""
    for _ in range(order):
        f = np.gradient(f, h, axis=axis, edge_order=2)
    return f


def gradient(f: np.ndarray, spacing) -> np.ndarray:
    """Stacked gradient with the component axis last."""
    return np.stack([deriv(f, h, ax) for ax, h in enumerate(spacing)], axis=-1)


def multi_indices(dim: int, order: int):
    """All multi-indices of exactly ``order`` in ``dim`` variables."""
    for combo in itertools.combinations_with_replacement(range(dim), order):
        alpha = [0] * dim
        for ax in combo:
            alpha[ax] += 1
        yield tuple(alpha)


def partial(f: np.ndarray, spacing, alpha) -> np.ndarray:
    for ax, k in enumerate(alpha):
        if k:
            f = deriv(f, spacing[ax], ax, k)
    return f


def ck_norm(f: np.ndarray, spacing, k: int) -> float:
    """Discrete C^k proxy: sum over |alpha| <= k of max |d^alpha f|."""
    if min(f.shape) < 5 and k >= 1:
        raise ValueError("grid too coarse for the C^k stencils (need >= 5 nodes per axis)")
    total = 0.0
    for order in range(k + 1):
        for alpha in multi_indices(f.ndim, order):
            total += float(np.max(np.abs(partial(f, spacing, alpha))))
    return total


def sobolev_norm(f: np.ndarray, spacing, k: int, weights: np.ndarray | None = None) -> float:
    """Discrete H^k proxy: sqrt of sum over |alpha| <= k of ||d^alpha f||_L2^2."""
    if weights is None:
        weights = 1.0
        for ax, (n, h) in enumerate(zip(f.shape, spacing)):
            shape = [1] * f.ndim
            shape[ax] = n
            weights = weights * trapezoid_weights(n, h).reshape(shape)
    total = 0.0
    for order in range(k + 1):
        for alpha in multi_indices(f.ndim, order):
            d = partial(f, spacing, alpha)
            total += float(np.sum(weights * d * d))
    return float(np.sqrt(total))


def l2_norm(f: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(np.sum(weights * f * f)))


def one_sided_normal(f: np.ndarray, h: float, axis: int, side: int) -> np.ndarray:
    """d f / d x_axis at the low (side=0) or high (side=1) face, 2nd order."""
    f = np.moveaxis(f, axis, 0)
    if side == 0:
        d = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    else:
        d = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return d


def one_sided_third(f: np.ndarray, h: float, axis: int, side: int) -> np.ndarray:
    """Third derivative at a face, one-sided 2nd-order 5-point stencil."""
    f = np.moveaxis(f, axis, 0)
    c = np.array([-5.0, 18.0, -24.0, 14.0, -3.0]) / (2.0 * h**3)
    if side == 0:
        return sum(ci * f[i] for i, ci in enumerate(c))
    return -sum(ci * f[-1 - i] for i, ci in enumerate(c))
