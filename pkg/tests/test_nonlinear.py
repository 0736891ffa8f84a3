import io
import json

import numpy as np
import pytest

from epduct.boundary import background_traces, generate_synthetic, sigma
from epduct.grid import DuctGrid
from epduct.nonlinear import (DataTooLargeError, InfeasibleWeightError, IterationConfig, IterationState,
                              NonContractionError, make_context, membership, picard_step, solve_nonlinear)

MODES = [{"target": "u_en", "k": 1, "l": 0, "amplitude": 1.0},
         {"target": "phi_ex", "k": 1, "l": 1, "amplitude": 0.5}]
FAST = dict(r_factor=0.0, m_max=4)


@pytest.fixture(scope="module")
def grid():
    return DuctGrid(41, 17, 17, 0.5)


def _data(bg, grid, s, modes=MODES):
    unit = generate_synthetic(modes, bg, grid)
    return unit.scaled(s / sigma(unit).sigma)


def test_config_validation():
    with pytest.raises(ValueError):
        IterationConfig(epsilon=0.5)
    with pytest.raises(ValueError):
        IterationConfig(under_relaxation=0.0)
    with pytest.raises(ValueError):
        IterationConfig(contraction_tol=0.0)


def test_membership(grid):
    z = np.zeros(grid.shape)
    ok, rep = membership(z, z, grid, 1e-2)
    assert ok and rep["norm"] == 0.0
    x1 = grid.x1[:, None, None] * np.ones(grid.shape)
    f = np.sin(x1)
    ok, rep = membership(f, z, grid, 1.0)
    scaled = f * (1e-2 / rep["norm"])
    assert membership(scaled, z, grid, 1e-2)[0]
    x2 = grid.x2[None, :, None] * np.ones(grid.shape)
    bad = 1e-4 * np.sin(np.pi * x2 / 4)
    assert not membership(bad, z, grid, 1.0)[0]


def test_first_step_is_linear_in_data(bg_constant, grid):
    cfg = IterationConfig(**FAST)
    out = []
    for s in (1e-6, 2e-6):
        ctx = make_context(_data(bg_constant, grid, s), bg_constant, cfg)
        M = ctx.basis.size
        st = picard_step(IterationState(np.zeros((grid.n1, M)), np.zeros((grid.n1, M))), ctx)
        out.append(st)
    for name in ("theta", "cap_theta"):
        a, b = getattr(out[1], name), getattr(out[0], name)
        # data are formed as b0 + lam * db, so roundoff of order eps * b0 enters
        np.testing.assert_allclose(a, 2 * b, rtol=0, atol=1e-8 * np.abs(a).max())


def test_zero_data_is_a_fixed_point(bg_moderate, grid):
    cfg = IterationConfig(**FAST)
    psi, cap, rep, state = solve_nonlinear(background_traces(bg_moderate, grid), bg_moderate, cfg)
    assert rep.converged and rep.iterations == 1
    assert np.all(psi == 0) and np.all(cap == 0)
    assert rep.fixed_point_move == 0.0


def test_converged_solution_and_log(bg_constant, grid):
    cfg = IterationConfig(**FAST)
    log = io.StringIO()
    _, _, rep, state = solve_nonlinear(_data(bg_constant, grid, 1e-5), bg_constant, cfg, log=log)
    lines = [json.loads(x) for x in log.getvalue().splitlines()]
    assert len(lines) == rep.iterations
    assert {"iteration", "step_diff", "residual", "norm_proxy", "regime_margin"} <= set(lines[0])
    assert rep.residual["l2"] <= cfg.residual_tol
    assert rep.regime_margin > 0
    assert rep.fixed_point_move <= cfg.contraction_tol
    assert rep.conservative["mass_l2"] < 1e-8 and rep.conservative["poisson_l2"] < 1e-8
    assert rep.q < 0.9


def test_q_decreases_with_sigma(bg_constant, grid):
    cfg = IterationConfig(**FAST)
    qs = [solve_nonlinear(_data(bg_constant, grid, s), bg_constant, cfg)[2].q for s in (1e-4, 1e-5)]
    assert qs[1] < qs[0] < 0.9


def test_b_only_perturbation_excites_matching_mode(bg_constant, grid):
    cfg = IterationConfig(**FAST)
    modes = [{"target": "b", "k": 2, "l": 1, "amplitude": 1.0}]
    _, _, _, state = solve_nonlinear(_data(bg_constant, grid, 1e-6, modes), bg_constant, cfg)
    ctx = make_context(_data(bg_constant, grid, 1e-6, modes), bg_constant, cfg)
    energy = np.sum(state.cap_theta**2, axis=0)
    assert int(np.argmax(energy)) == ctx.basis.index(2, 1)
    others = np.delete(energy, ctx.basis.index(2, 1))
    assert others.max() < 1e-6 * energy.max()


def test_mollified_iteration_converges(bg_constant):
    grid = DuctGrid(41, 33, 33, 0.5)
    cfg = IterationConfig(m_max=4, r_factor=2.0)
    _, _, rep, _ = solve_nonlinear(_data(bg_constant, grid, 1e-5), bg_constant, cfg)
    assert rep.converged and rep.residual["l2"] <= cfg.residual_tol


def test_failure_modes(bg_constant, grid):
    with pytest.raises(NonContractionError):
        solve_nonlinear(_data(bg_constant, grid, 1e-5), bg_constant, IterationConfig(max_iter=1, **FAST))
    with pytest.raises(DataTooLargeError):
        solve_nonlinear(_data(bg_constant, grid, 1e-2), bg_constant, IterationConfig(**FAST))
    long_grid = DuctGrid(41, 17, 17, 1.9)
    with pytest.raises(InfeasibleWeightError):
        solve_nonlinear(_data(bg_constant, long_grid, 1e-6), bg_constant, IterationConfig(**FAST))
