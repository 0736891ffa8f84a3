"""Boundary data (b, u_en, E_en, Phi_ex), smallness gauge and compatibility."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .background import BackgroundSolution
from .files import write_json, write_table
from .grid import DuctGrid, ck_norm, one_sided_normal, one_sided_third
from .spectral import CrossSectionBasis, eigenpair


@dataclass(frozen=True)
class BoundaryData:
    """Entrance/exit data plus ion density sampled on ``grid``.

    ``b`` has shape grid.shape, the traces have shape grid.cross_shape.
    The reference constants are the background values the perturbations
    are measured against.
    """

    grid: DuctGrid
    b: np.ndarray
    u_en: np.ndarray
    e_en: np.ndarray
    phi_ex: np.ndarray
    b0: float
    u0: float
    e0: float
    cap_phi0_exit: float

    def __post_init__(self):
        if self.b.shape != self.grid.shape:
            raise ValueError(f"b has shape {self.b.shape}, expected {self.grid.shape}")
        for name in ("u_en", "e_en", "phi_ex"):
            if getattr(self, name).shape != self.grid.cross_shape:
                raise ValueError(f"{name} must have shape {self.grid.cross_shape}")

    @property
    def g1(self) -> np.ndarray:
        return self.u_en - self.u0

    @property
    def g2(self) -> np.ndarray:
        return self.e_en - self.e0

    @property
    def psi_ex(self) -> np.ndarray:
        return self.phi_ex - self.cap_phi0_exit

    @property
    def db(self) -> np.ndarray:
        return self.b - self.b0

    def scaled(self, lam: float) -> "BoundaryData":
        """Data whose perturbations from the background are multiplied by lam."""
        return BoundaryData(self.grid, self.b0 + lam * self.db, self.u0 + lam * self.g1,
                            self.e0 + lam * self.g2, self.cap_phi0_exit + lam * self.psi_ex,
                            self.b0, self.u0, self.e0, self.cap_phi0_exit)


def background_traces(bg: BackgroundSolution, grid: DuctGrid) -> BoundaryData:
    p = bg.params
    phi_exit = float(bg.sample(grid.length)["cap_phi0"])
    cs = grid.cross_shape
    return BoundaryData(grid, np.full(grid.shape, p.b0), np.full(cs, p.u0), np.full(cs, p.e0),
                        np.full(cs, phi_exit), p.b0, p.u0, p.e0, phi_exit)


@dataclass(frozen=True)
class SigmaReport:
    sigma: float
    b_c2: float
    u_en_c3: float
    e_en_c4: float
    phi_ex_c4: float

    def as_dict(self) -> dict:
        return {"sigma": self.sigma, "b_C2": self.b_c2, "u_en_C3": self.u_en_c3,
                "E_en_C4": self.e_en_c4, "Phi_ex_C4": self.phi_ex_c4}


def sigma(data: BoundaryData) -> SigmaReport:
    g = data.grid
    cs = (g.h2, g.h3)
    terms = (ck_norm(data.db, g.spacing, 2), ck_norm(data.g1, cs, 3),
             ck_norm(data.g2, cs, 4), ck_norm(data.psi_ex, cs, 4))
    return SigmaReport(float(sum(terms)), *terms)


@dataclass
class CompatibilityReport:
    tol: float
    residuals: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.residuals.items() if v > self.tol]


def _edge_residual(f2d, h2, h3, third=False):
    """Max one-sided normal derivative of a cross-section field over its edges."""
    op = one_sided_third if third else one_sided_normal
    vals = [np.max(np.abs(op(f2d, h, ax, side))) for ax, h in ((0, h2), (1, h3)) for side in (0, 1)]
    return float(max(vals))


def validate_compatibility(data: BoundaryData, tol: float | None = None) -> CompatibilityReport:
    g = data.grid
    h = max(g.h2, g.h3)
    if tol is None:
        tol = 10.0 * h * h
    rep = CompatibilityReport(tol=tol)
    wall = [np.max(np.abs(one_sided_normal(data.b, hh, ax, side)))
            for ax, hh in ((1, g.h2), (2, g.h3)) for side in (0, 1)]
    rep.residuals["dn_b_wall"] = float(max(wall))
    rep.residuals["dn_u_en"] = _edge_residual(data.u_en, g.h2, g.h3)
    rep.residuals["dn_E_en"] = _edge_residual(data.e_en, g.h2, g.h3)
    rep.residuals["dn3_E_en"] = _edge_residual(data.e_en, g.h2, g.h3, third=True)
    rep.residuals["dn_Phi_ex"] = _edge_residual(data.phi_ex, g.h2, g.h3)
    rep.residuals["dn3_Phi_ex"] = _edge_residual(data.phi_ex, g.h2, g.h3, third=True)
    return rep


TARGETS = ("b", "u_en", "e_en", "phi_ex")


def generate_synthetic(modes: list[dict], bg: BackgroundSolution, grid: DuctGrid) -> BoundaryData:
    """Background traces plus Neumann cosine perturbations.

    Each entry: ``{"target": name, "k": int, "l": int, "amplitude": float}``;
    for ``b`` an optional ``"x1_mode": j`` multiplies by cos(j pi x1 / L).
    ``"kind"`` other than ``"cos"`` is refused since it breaks the wall
    compatibility conditions.
    """
    base = background_traces(bg, grid)
    fields = {"b": base.b.copy(), "u_en": base.u_en.copy(), "e_en": base.e_en.copy(),
              "phi_ex": base.phi_ex.copy()}
    x2, x3 = grid.cross_mesh()
    for m in modes:
        kind = m.get("kind", "cos")
        if kind != "cos":
            raise ValueError(f"mode kind {kind!r} violates the wall compatibility conditions")
        target = m["target"]
        if target not in TARGETS:
            raise ValueError(f"unknown target {target!r}")
        k, l = int(m["k"]), int(m["l"])
        if k < 0 or l < 0:
            raise ValueError("mode indices must be non-negative")
        _, eta = eigenpair(k, l)
        shape = float(m["amplitude"]) * eta(x2, x3) / eta(-1.0, -1.0)
        if target == "b":
            j = int(m.get("x1_mode", 0))
            prof = np.cos(j * np.pi * grid.x1 / grid.length)
            fields["b"] += prof[:, None, None] * shape[None]
        else:
            fields[target] += shape
    return BoundaryData(grid, fields["b"], fields["u_en"], fields["e_en"], fields["phi_ex"],
                        base.b0, base.u0, base.e0, base.cap_phi0_exit)


@dataclass(frozen=True)
class PsiShift:
    """S = (x1 - L) g2 + psi_ex and what it contributes to the sources.

    ``df1``/``df2`` are to be added to f1/f2 so that Psi~ = Psi - S solves
    the problem with homogeneous Psi boundary conditions.
    """

    shift: np.ndarray
    modes: np.ndarray
    df1: np.ndarray
    df2: np.ndarray


def homogenize_psi(data: BoundaryData, basis: CrossSectionBasis, base=None) -> PsiShift:
    """Shift field S and the source corrections -(b1 S_1 + b2 S), -(Lap S - h1 S).

    The cross-section Laplacian of S is taken in the cosine basis, so g2 and
    psi_ex are represented by their projections.  With ``base=None`` the
    corrections are zero (only S is returned).
    """
    g = data.grid
    x1 = g.x1[:, None]
    g2m = basis.project(data.g2)
    pexm = basis.project(data.psi_ex)
    s_modes = (x1 - g.length) * g2m[None, :] + pexm[None, :]
    shift = basis.reconstruct(s_modes)
    if base is None:
        zero = np.zeros(g.shape)
        return PsiShift(shift, s_modes, zero, zero)
    lap = basis.reconstruct(-basis.omega[None, :] * s_modes)
    s1 = basis.reconstruct(np.broadcast_to(g2m, s_modes.shape))
    bb1 = base.b1_bar[:, None, None]
    bb2 = base.b2_bar[:, None, None]
    hh1 = base.h1_bar[:, None, None]
    df1 = -(bb1 * s1 + bb2 * shift)
    df2 = -(lap - hh1 * shift)
    return PsiShift(shift, s_modes, df1, df2)


# -- file IO -------------------------------------------------------------

def write_field_csv(path, coords: dict, values: np.ndarray) -> None:
    """CSV with header (coord names..., value), last coordinate fastest."""
    names = list(coords)
    mesh = np.meshgrid(*[coords[n] for n in names], indexing="ij")
    write_table(path, names + ["value"], [*mesh, np.asarray(values)])


def read_field_csv(path, shape) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-1] != "value":
        raise ValueError(f"{path}: last column must be 'value'")
    vals = np.array([float(r[-1]) for r in body])
    if vals.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {vals.size} rows, expected {int(np.prod(shape))}")
    return vals.reshape(shape)


def load_boundary_data(manifest_path, bg: BackgroundSolution, grid: DuctGrid) -> BoundaryData:
    """Read the JSON manifest ``{"b":..., "u_en":..., "E_en":..., "Phi_ex":...}``."""
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    base = background_traces(bg, grid)
    def get(key, shape):
        return read_field_csv(root / spec[key], shape)
    return BoundaryData(grid, get("b", grid.shape), get("u_en", grid.cross_shape),
                        get("E_en", grid.cross_shape), get("Phi_ex", grid.cross_shape),
                        base.b0, base.u0, base.e0, base.cap_phi0_exit)


def save_boundary_data(data: BoundaryData, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = data.grid
    write_field_csv(directory / "b.csv", {"x1": g.x1, "x2": g.x2, "x3": g.x3}, data.b)
    for name, arr in (("u_en", data.u_en), ("E_en", data.e_en), ("Phi_ex", data.phi_ex)):
        write_field_csv(directory / f"{name}.csv", {"x2": g.x2, "x3": g.x3}, arr)
    manifest = {"b": "b.csv", "u_en": "u_en.csv", "E_en": "E_en.csv", "Phi_ex": "Phi_ex.csv"}
    return write_json(directory / "boundary.json", manifest)
