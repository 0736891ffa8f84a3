import dataclasses

import numpy as np
import pytest

from epduct.coefficients import base
from epduct.energy import (apriori_check, energy_identity, kappa0, length_sweep, margins, reaudit,
                           synthesize_weight)
from epduct.grid import DuctGrid
from epduct.linear import solve
from epduct.mms import manufactured_problem
from epduct.spectral import CrossSectionBasis


def test_weight_feasible_on_short_duct(bg_constant):
    wt = synthesize_weight(bg_constant, 0.5)
    assert wt.feasible
    assert wt.w[0] == 1.0
    r = wt.restricted()
    assert np.all(r.w > 0)
    assert r.x1[-1] == pytest.approx(0.5)
    assert wt.min_margins(0.5).min() >= wt.min_margin
    assert 0.5 < wt.feasible_length < 2.0


def test_margins_recomputed_match(bg_constant):
    wt = synthesize_weight(bg_constant, 0.5)
    np.testing.assert_allclose(margins(base(bg_constant, wt.x1), wt.w, wt.dw, wt.kappa), wt.margins)
    assert kappa0(base(bg_constant, wt.x1)) == pytest.approx(wt.kappa)


def test_reaudit_keeps_positivity(bg_moderate):
    wt = synthesize_weight(bg_moderate, 0.5)
    assert reaudit(wt, bg_moderate, factor=4).min() > 0


def test_length_sweep_is_monotone(bg_constant):
    rows = length_sweep(bg_constant, [0.25, 0.5, 1.0, 1.5, 2.0])
    flags = [r["feasible"] for r in rows]
    assert flags[0] and not flags[-1]
    first_bad = flags.index(False)
    assert not any(flags[first_bad:])


def test_identity_converges_second_order(bg_moderate):
    basis = CrossSectionBasis(4, 17, 17)
    wt = synthesize_weight(bg_moderate, 0.5)
    gaps = []
    for n1 in (51, 101):
        grid = DuctGrid(n1, 17, 17, 0.5)
        case = manufactured_problem(base(bg_moderate, grid.x1), grid, basis, kmax=2)
        rep = energy_identity(solve(case.problem, verify=False), case.problem, wt)
        gaps.append(rep.identity_gap)
        assert rep.lhs == pytest.approx(rep.rhs, rel=1e-2)
        assert rep.lambda0 > 0
    assert np.log2(gaps[0] / gaps[1]) > 1.8


def test_apriori_ratio_is_scale_invariant(bg_moderate):
    grid = DuctGrid(41, 17, 17, 0.5)
    basis = CrossSectionBasis(3, 17, 17)
    case = manufactured_problem(base(bg_moderate, grid.x1), grid, basis, kmax=2)
    p = case.problem
    r1 = apriori_check(solve(p, verify=False), p)
    p2 = dataclasses.replace(p, coeffs=dataclasses.replace(p.coeffs, f1=1e-3 * p.coeffs.f1,
                                                           f2=1e-3 * p.coeffs.f2), g=1e-3 * p.g)
    r2 = apriori_check(solve(p2, verify=False), p2)
    assert r1["status"] == "ok"
    assert r2["ratio"] == pytest.approx(r1["ratio"], rel=1e-9)
    p0 = dataclasses.replace(p, coeffs=dataclasses.replace(p.coeffs, f1=0 * p.coeffs.f1, f2=0 * p.coeffs.f2),
                             g=0 * p.g)
    assert apriori_check(solve(p0, verify=False), p0)["status"] == "vacuous"
