import numpy as np
import pytest
from scipy.integrate import quad

from magcgo.carleman import (BoundaryTraceError, CarlemanReport, LinearWeight, QuadraticWeight, audit, carleman_sides,
                             fit_constant, limiting_weight_residual, random_bumps)
from magcgo.grid import Field

from conftest import zeros

E3 = np.array([0.0, 0, 1])


def test_linear_weight_is_limiting():
    for d in (E3, np.array([0.6, 0.0, 0.8])):
        assert limiting_weight_residual(LinearWeight(d)) == 0.0
    assert limiting_weight_residual(QuadraticWeight((-1.0, -1.0, -1.0))) > 0
    with pytest.raises(ValueError):
        limiting_weight_residual(LinearWeight(np.array([1.0, 1.0, 0])))


def _sine(grid):
    x = grid.coords
    inside = np.all((x >= -1e-12) & (x <= 1 + 1e-12), axis=0)
    return Field(grid, np.where(inside, np.prod(np.sin(np.pi * np.clip(x, 0, 1)), axis=0), 0.0).astype(complex))


def test_sides_match_quadrature(grid24):
    """u = sin πx sin πy sin πz, φ = -z, h = 1, free operator."""
    rep = carleman_sides(_sine(grid24), zeros(grid24, vector=True), zeros(grid24), E3, 1.0)
    s2 = quad(lambda t: np.sin(np.pi * t) ** 2, 0, 1)[0]
    c2 = quad(lambda t: np.cos(np.pi * t) ** 2, 0, 1)[0]
    s2w = quad(lambda t: np.sin(np.pi * t) ** 2 * np.exp(-2 * t), 0, 1)[0]
    c2w = quad(lambda t: np.cos(np.pi * t) ** 2 * np.exp(-2 * t), 0, 1)[0]
    grad = np.pi ** 2 * (2 * c2 * s2 * s2w + s2 * s2 * c2w)
    lap = 9 * np.pi ** 4 * s2 * s2 * s2w
    assert rep.lhs_grad == pytest.approx(grad, rel=2e-2)
    assert rep.rhs_interior == pytest.approx(lap, rel=5e-2)


def test_face_terms_converge_second_order():
    from magcgo.grid import make_grid
    errs = []
    for N in (12, 24):
        g = make_grid(N)
        rep = carleman_sides(_sine(g), zeros(g, vector=True), zeros(g), E3, 1.0)
        # ∂_z u = ∓π sin πx sin πy on z = 1 and z = 0; the weight e^{-2z} sits on the z = 1 face
        errs.append((abs(rep.lhs_minus / (np.exp(-2) * np.pi ** 2 / 4) - 1), abs(rep.rhs_plus / (np.pi ** 2 / 4) - 1)))
    assert errs[1][0] <= 5e-2 and errs[1][1] <= 5e-2
    assert errs[0][0] / errs[1][0] >= 3.5 and errs[0][1] / errs[1][1] >= 3.5


def test_zero_function(grid24):
    rep = carleman_sides(zeros(grid24), zeros(grid24, vector=True), zeros(grid24), E3, 0.2)
    assert (rep.lhs_minus, rep.lhs_grad, rep.rhs_interior, rep.rhs_plus) == (0.0, 0.0, 0.0, 0.0)
    assert rep.required_C == 0.0


def test_rejects_bad_inputs(grid24):
    u = Field(grid24, np.ones(grid24.shape, dtype=complex))
    W, q = zeros(grid24, vector=True), zeros(grid24)
    with pytest.raises(BoundaryTraceError):
        carleman_sides(u, W, q, E3, 0.2)
    with pytest.raises(ValueError):
        carleman_sides(_sine(grid24), W, q, E3, 0.0)
    with pytest.raises(ValueError):
        carleman_sides(_sine(grid24), W, q, 2 * E3, 0.2)


def test_quadratic_homogeneity(pair24):
    g = pair24.grid
    u = random_bumps(g, 2, seed=3)[1]
    base = carleman_sides(u, pair24.W1.W, pair24.q1.q, E3, 0.2)
    c = 2 - 3j
    scaled = carleman_sides(Field(g, c * u.values), pair24.W1.W, pair24.q1.q, E3, 0.2)
    for a, b in ((base.lhs_grad, scaled.lhs_grad), (base.lhs_minus, scaled.lhs_minus),
                 (base.rhs_interior, scaled.rhs_interior), (base.rhs_plus, scaled.rhs_plus)):
        assert b == pytest.approx(abs(c) ** 2 * a, rel=1e-12)


def test_bumps_vanish_on_boundary(grid24):
    for u in random_bumps(grid24, 6, seed=1):
        assert np.max(np.abs(u.values[tuple(grid24.boundary.nodes.T)])) == 0.0


def test_audit_fits_finite_constant(pair24):
    gt = np.array([0.0, 0.6, 0.8])
    C, reports = audit(pair24.grid, pair24.W1.W, pair24.q1.q, gt, h=0.1, count=20)
    assert 0 < C < np.inf
    assert all(r.lhs_minus >= 0 and r.rhs_plus >= 0 for r in reports)
    assert all(r.holds(C) for r in reports)
    assert all(r.fitted_C == C for r in reports)


def test_fitted_constant_is_never_negative():
    reports = [CarlemanReport(0.1, E3, 0.0, 1.0, 2.0, 5.0), CarlemanReport(0.1, E3, 0.0, 0.5, 1.0, 3.0)]
    assert all(r.required_C < 0 for r in reports)
    assert fit_constant(reports) == 0.0
    assert all(r.holds(0.0) for r in reports)
