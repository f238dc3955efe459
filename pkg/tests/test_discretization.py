import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gelfand import nonlinearity, solver
from gelfand.discretization import (AXIS_S, AXIS_T, EXTERIOR, GHOST, INTERIOR, ORIGIN, assemble,
                                    build_grid, c_mk, gradient_fields, read_field, sphere_area,
                                    weighted_integral, write_field)
from gelfand.errors import NonFiniteIntegrand, SpacingTooCoarse
from gelfand.geometry import DomainSpec, Dumbbell, QuarterDisc, SuperEllipse, boundary_distance, contains
from gelfand.stability import smallest_eigenvalue

from oracles import unit_ball_volume

DISC22 = DomainSpec(2, 2, QuarterDisc())


@pytest.fixture(scope="module")
def grid64():
    return build_grid(DISC22, 1 / 64)


def paraboloid(n):
    return lambda s, t: (1 - s * s - t * t) / (2 * n)


def test_node_counts(grid64):
    c = grid64.counts()
    assert (c["interior"], c["axis-s"], c["axis-t"], c["origin"], c["dirichlet-ghost"]) == (3149, 63, 63, 1, 92)
    # each node stands for its control cell clipped to the quadrant
    cells = c["interior"] + 0.5 * (c["axis-s"] + c["axis-t"]) + 0.25 * c["origin"]
    area = math.pi / 4 * 64**2
    assert abs(cells - area) / area < 0.02


def test_spacing_too_coarse():
    with pytest.raises(SpacingTooCoarse):
        build_grid(DISC22, 0.5)


def test_circle_super_ellipse_gives_same_nodes(grid64):
    other = build_grid(DomainSpec(2, 2, SuperEllipse(1.0, 1.0, 2.0)), 1 / 64)
    assert np.array_equal(grid64.classification, other.classification)
    assert np.nanmax(np.abs(grid64.theta - other.theta)) < 1e-10


def test_classification_consistent_with_geometry(grid64):
    g = grid64
    inside = contains(g.spec, (g.s, g.t))
    unk = g.unknown
    assert np.all(inside[unk] | (boundary_distance(g.spec, (g.s[unk], g.t[unk])) > -1e-6 * g.h))
    assert np.all(~inside[g.classification == EXTERIOR])
    assert np.all(g.classification[(g.s == 0) & (g.t == 0)] == ORIGIN)
    assert np.all(g.s[g.classification == AXIS_S] == 0)
    assert np.all(g.t[g.classification == AXIS_T] == 0)
    assert np.all(~inside[g.classification == GHOST])


def test_links_and_weights(grid64):
    g = grid64
    w = g.node_weight
    assert np.all(w >= 0)
    assert np.all(w[(g.s == 0) | (g.t == 0)] == 0)
    interior = g.classification == INTERIOR
    th = g.theta[:, interior]
    assert np.all((th > 0) & (th <= 1))
    # axis nodes lack exactly the link across their axis
    assert np.all(np.isnan(g.theta[1][g.classification == AXIS_S]))
    assert np.all(np.isnan(g.theta[3][g.classification == AXIS_T]))


def test_constant_is_harmonic_away_from_boundary(grid64):
    op = assemble(grid64)
    Au = op.apply(np.ones(grid64.size))
    far = ~grid64.cut[grid64.unknown]
    assert np.max(np.abs(Au[far])) < 1e-9


@pytest.mark.parametrize("m,k", [(2, 2), (3, 5)])
def test_paraboloid_exact_at_uncut_nodes(m, k):
    for h in (1 / 32, 1 / 64, 1 / 128):
        g = build_grid(DomainSpec(m, k), h)
        op = assemble(g)
        r = op.apply(g.evaluate(paraboloid(m + k))) - 1.0
        assert np.max(np.abs(r[~g.cut[g.unknown]])) < 1e-9


def test_solve_error_second_order():
    errs = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        g = build_grid(DISC22, h)
        sol = solver.solve_fixed(g, assemble(g), nonlinearity.constant(1.0), 1.0)
        errs.append(np.max(np.abs(sol.values - g.evaluate(paraboloid(4)))))
    assert errs[2] < 3 * (1 / 128)
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_positive_definite_at_coarse_resolution():
    g = build_grid(DISC22, 1 / 16)
    assert smallest_eigenvalue(g, assemble(g)).mu1 > 0


_SYM_GRID = build_grid(DomainSpec(2, 3), 1 / 16)
_SYM_OP = assemble(_SYM_GRID)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 2 * _SYM_GRID.size, elements=st.floats(-1.0, 1.0)))
def test_weighted_symmetry(data):
    op = _SYM_OP
    u, v = data[: _SYM_GRID.size], data[_SYM_GRID.size:]
    lhs = op.inner(op.apply(u), v)
    rhs = op.inner(u, op.apply(v))
    # roundoff scale of the two bilinear sums
    scale = float(np.abs(u) @ (abs(op.K) @ np.abs(v)))
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1e-300)


def test_stiffness_matrix_is_symmetric(grid64):
    K = assemble(grid64).K
    assert abs(K - K.T).max() == 0.0


def test_unit_ball_volume():
    exact = unit_ball_volume(4)
    # the cut cells make the error oscillate, so check an O(h) envelope rather than ratios
    for n in (24, 32, 48, 64, 96, 128, 192):
        g = build_grid(DISC22, 1 / n)
        rel = abs(weighted_integral(g, np.ones(g.size)) - exact) / exact
        assert rel <= 0.5 / n
        if n == 128:
            assert rel < 0.01


def test_c_mk_is_product_of_sphere_areas():
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert c_mk(2, 3) == pytest.approx(8 * math.pi**2)


def test_singular_weight_integrals():
    g = build_grid(DISC22, 1 / 128)
    us, _ = gradient_fields(g, g.evaluate(paraboloid(4)))
    us = us[g.unknown]
    val2 = weighted_integral(g, us**2, lambda s, t: s**-2.0)
    val3 = weighted_integral(g, us**2, lambda s, t: s**-3.0)
    # u_s^2/s^2 = 1/16 on B^4 gives |B^4|/16
    assert val2 == pytest.approx(math.pi**2 / 32, rel=0.01)
    assert val3 == pytest.approx(math.pi**2 / 12, rel=0.01)


def test_singular_weight_on_nonvanishing_field_raises():
    g = build_grid(DISC22, 1 / 32)
    with pytest.raises(NonFiniteIntegrand):
        weighted_integral(g, np.ones(g.size), lambda s, t: s**-2.0)


def test_gradient_examples(grid64):
    g = grid64
    unk = g.unknown
    us, _ = gradient_fields(g, g.s)
    plain = unk & ~g.cut & (g.s > 0)
    assert np.max(np.abs(us[plain] - 1)) < 1e-12
    assert np.all(us[g.s == 0] == 0)
    us, ut = gradient_fields(g, g.evaluate(paraboloid(4)))
    assert np.max(np.abs(us[unk] + g.s[unk] / 4)) < 10 * g.h**2
    assert np.max(np.abs(ut[unk] + g.t[unk] / 4)) < 10 * g.h**2
    us, ut = gradient_fields(g, np.full(g.size, 3.0))
    assert not us.any() and not ut.any()


def test_field_roundtrip(tmp_path, grid64):
    u = grid64.evaluate(lambda s, t: np.sin(s + 2 * t) / 3)
    write_field(tmp_path / "u", grid64, u, {"lambda": 0.5})
    header, rows = read_field(tmp_path / "u")
    assert header["h"] == grid64.h and header["lambda"] == 0.5
    assert header["classification"]["interior"] == 3149
    assert np.array_equal(rows[:, 4], u)


def test_dumbbell_grid_builds():
    spec = DomainSpec(2, 2, Dumbbell())
    g = build_grid(spec, 1 / 64)
    assert g.counts()["origin"] == 0
    assert g.size > 0
    assert abs(assemble(g).K - assemble(g).K.T).max() == 0.0
