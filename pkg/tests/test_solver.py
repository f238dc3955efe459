import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gelfand import nonlinearity, solver
from gelfand.discretization import assemble, build_grid
from gelfand.errors import LadderTooShort, NoConvergence
from gelfand.geometry import DomainSpec

# lambda* of the unit ball from the radial shooting oracle (tests/oracles.py), frozen
SHOOTING = {
    ("exp", 4): 4.814696204364124,
    ("exp", 5): 6.453563669148139,
    ("exp", 6): 8.215877602728924,
    ("exp", 10): 16.0,
    ("power", 4): 3.4348648910564132,
    ("power", 5): 4.657174588788355,
    ("power", 10): 12.400801299912384,
}

EXP = nonlinearity.make("exp")
POWER2 = nonlinearity.make("power", {"p": 2})


@pytest.fixture(scope="module")
def coarse():
    g = build_grid(DomainSpec(2, 2), 1 / 32)
    return g, assemble(g)


@pytest.fixture(scope="module")
def exp_branch(coarse):
    g, op = coarse
    return solver.continue_branch(g, op, EXP)


def test_lambda_zero_gives_zero_in_one_step(coarse):
    g, op = coarse
    sol = solver.solve_fixed(g, op, EXP, 0.0)
    assert not sol.values.any()
    assert sol.iterations == 1


def test_linear_problem(coarse):
    g, op = coarse
    sol = solver.solve_fixed(g, op, nonlinearity.constant(1.0), 1.0)
    exact = g.evaluate(lambda s, t: (1 - s * s - t * t) / 8)
    assert np.max(np.abs(sol.values - exact)) < g.h


def test_far_above_fold_does_not_converge(coarse):
    g, op = coarse
    with pytest.raises(NoConvergence) as info:
        solver.solve_fixed(g, op, EXP, 10 * SHOOTING[("exp", 4)])
    assert info.value.iterations >= 1 and np.isfinite(info.value.residual)


def test_negative_lambda_rejected(coarse):
    g, op = coarse
    with pytest.raises(ValueError):
        solver.solve_fixed(g, op, EXP, -1.0)


def test_branch_invariants(coarse, exp_branch):
    g, op = coarse
    pts = exp_branch.points
    lam = exp_branch.lambdas
    assert np.all(np.diff(lam) > 0)
    io, jo = g.origin_index
    for prev, cur in zip(pts, pts[1:]):
        assert np.all(cur.solution.values >= prev.solution.values - 1e-8)
    for p in pts[1:]:
        u = p.solution.values
        assert np.all(u >= -1e-10)
        assert p.mu1 > -solver.EIG_TOL
        assert p.solution.residual_norm <= solver.default_tol(op, EXP, p.lam, u)
        # convex generator: the maximum sits at the origin
        assert np.unravel_index(np.argmax(g.to_array(u, -np.inf)), g.shape) == (io, jo)
        assert p.u0 == pytest.approx(p.sup_norm)


def test_branch_brackets_oracle(exp_branch):
    lo, hi = exp_branch.interval
    assert hi > lo
    assert abs(lo - SHOOTING[("exp", 4)]) / SHOOTING[("exp", 4)] < 0.01


def test_mu1_fold_estimate_inside_interval(exp_branch):
    lo, hi = exp_branch.interval
    assert lo <= solver.fold_from_mu1(exp_branch) <= hi


def test_power_branch_mu1_decreases(coarse):
    g, op = coarse
    br = solver.continue_branch(g, op, POWER2)
    mu = br.mu1
    assert np.all(np.diff(mu) <= 1e-6)
    assert mu[-1] < mu[1]


def test_step_min_equal_to_step0(coarse):
    g, op = coarse
    br = solver.continue_branch(g, op, EXP, lambda_step0=1.0, step_min=1.0)
    assert len(br.failures) <= 1
    assert br.interval == (4.0, 5.0)


def test_bad_steps_rejected(coarse):
    g, op = coarse
    with pytest.raises(ValueError):
        solver.continue_branch(g, op, EXP, lambda_step0=1e-3, step_min=1.0)


def test_default_step_from_first_eigenvalue(coarse):
    g, op = coarse
    assert solver.default_step(g, op, EXP) == pytest.approx(0.1 * 14.68, rel=0.01)
    assert solver.default_step(g, op, POWER2) == pytest.approx(0.05 * 14.68, rel=0.01)


def test_ladder_too_short():
    with pytest.raises(LadderTooShort):
        solver.lambda_star(DomainSpec(2, 2), EXP, ladder=(1 / 32,))


def test_extremal_approximation(coarse, exp_branch):
    g, _ = coarse
    zero = solver.extremal_approximation(exp_branch, 0.0)
    assert not zero.values.any()
    sol = solver.extremal_approximation(exp_branch, 0.9)
    assert sol.lam == pytest.approx(0.9 * exp_branch.interval[0])
    with pytest.raises(ValueError):
        solver.extremal_approximation(exp_branch, 1.5)


def test_branch_rows_match_columns(exp_branch):
    rows = solver.branch_rows(exp_branch)
    assert len(rows[0]) == len(solver.BRANCH_COLUMNS)
    assert rows[0][0] == 0.0 and rows[0][2] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.floats(0.1, 10), st.floats(0.51, 3.99))
def test_richardson_exact_on_pure_power_law(limit, c, p):
    hs = [1 / 32, 1 / 64, 1 / 128]
    vals = [limit + c * h**p for h in hs]
    est, order = solver.richardson(hs, vals)
    assert order == pytest.approx(p, abs=1e-6)
    assert est == pytest.approx(limit, abs=1e-9 * max(1, abs(limit)) + 1e-10)


def test_richardson_falls_back_to_second_order():
    hs = [1 / 32, 1 / 64, 1 / 128]
    vals = [1.0, 2.0, 1.5]  # oscillating: no observed order
    est, order = solver.richardson(hs, vals)
    assert order == 2.0
    assert est == pytest.approx(1.5 + (1.5 - 2.0) / 3)


@pytest.mark.slow
def test_lambda_star_exp_22_matches_oracle(ball_lambda_star):
    est = ball_lambda_star("exp", 2, 2)
    assert abs(est.extrapolated - SHOOTING[("exp", 4)]) / SHOOTING[("exp", 4)] < 5e-3
    for (lo, hi), pt in zip(est.intervals, est.point_estimates):
        assert lo <= pt <= hi
    assert math.isfinite(est.order)
