import numpy as np
import pytest
import scipy.sparse as sp

from magcgo.forward import (SpectralGuardError, assemble_operator, dirichlet_solve, dn_map, dn_operator_norm,
                            load_dn_map, restrict_partial, save_dn_map)
from magcgo.grid import BoundaryTrace, Field, make_grid
from magcgo.potentials import sample_admissible_pair

from conftest import zeros

G12 = make_grid(12)


@pytest.fixture(scope="module")
def free12():
    return assemble_operator(zeros(G12, vector=True), zeros(G12), G12)


def _cube_values(grid, values):
    i0, i1 = grid.domain_index
    return np.asarray(values)[i0:i1 + 1, i0:i1 + 1, i0:i1 + 1].reshape(-1)


def test_free_operator_is_negative_laplacian(free12):
    g = G12
    x, y, z = g.coords
    u = _cube_values(g, x ** 2 + 2 * y ** 2 - z * x)
    Hu = (free12.matrix @ u) / g.spacing ** 3
    # -Δ(x² + 2y² - zx) = -6, exact for the 7-point stencil on quadratics
    assert np.allclose(Hu[free12.interior], -6.0, atol=1e-9)


def test_operator_hermitian(pair24):
    op = assemble_operator(pair24.W1.W, pair24.q1.q, pair24.grid)
    assert abs(op.matrix - op.matrix.conj().T).max() == 0
    free = assemble_operator(zeros(pair24.grid, vector=True), zeros(pair24.grid), pair24.grid)
    assert abs(free.matrix - free.matrix.T).max() == 0


def test_constant_q_shifts_diagonal(free12):
    c = 0.7
    op = assemble_operator(zeros(G12, vector=True), Field(G12, np.full(G12.shape, c)), G12)
    diff = (op.hamiltonian - free12.hamiltonian).tocsr()
    assert np.allclose(diff.diagonal(), c, rtol=0, atol=1e-12)
    assert abs(diff - sp.diags(diff.diagonal())).max() == 0


def test_sparsity_is_seven_point(pair24):
    op = assemble_operator(pair24.W1.W, pair24.q1.q, pair24.grid)
    assert op.A_ii.getnnz(axis=1).max() == 7


def test_gauge_phase_annihilates_plane_wave():
    w = 1.3
    g = G12
    W = Field(g, np.stack([np.full(g.shape, w), np.zeros(g.shape), np.zeros(g.shape)]))
    op = assemble_operator(W, zeros(g), g)
    u = _cube_values(g, np.exp(-1j * w * g.coords[0]))
    Hu = op.matrix @ u
    assert np.max(np.abs(Hu[op.interior])) <= 1e-12


def test_dirichlet_constant_and_linear(free12):
    mesh = G12.boundary
    one = dirichlet_solve(free12, BoundaryTrace(G12, np.ones(mesh.size)))
    i0, i1 = G12.domain_index
    sl = (slice(i0, i1 + 1),) * 3
    assert np.allclose(one.values[sl], 1.0, atol=1e-10)
    x1 = Field(G12, G12.coords[0])
    u = dirichlet_solve(free12, BoundaryTrace.from_field(x1))
    assert np.allclose(u.values[sl], G12.coords[0][sl], atol=1e-10)


def test_dirichlet_residual_and_trace(pair24):
    g = pair24.grid
    op = assemble_operator(pair24.W1.W, pair24.q1.q, g)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(g.boundary.size) + 1j * rng.standard_normal(g.boundary.size)
    u = dirichlet_solve(op, BoundaryTrace(g, f))
    uc = _cube_values(g, u.values)
    assert np.array_equal(uc[op.boundary], f)
    res = (op.matrix @ uc)[op.interior]
    assert np.linalg.norm(res) <= 1e-9 * np.linalg.norm(op.A_ib @ f)


def test_spectral_guard_on_resonant_potential():
    g = G12
    h = g.spacing
    lam = 3 * (4 / h ** 2) * np.sin(np.pi * h / 2) ** 2
    op = assemble_operator(zeros(g, vector=True), Field(g, np.full(g.shape, -lam)), g)
    with pytest.raises(SpectralGuardError):
        op.check_spectrum()


def test_dn_basis_size_and_free_constant_column(grid24):
    dn = dn_map(zeros(grid24, vector=True), zeros(grid24), grid24, 4)
    assert dn.matrix.shape == (150, 150)
    const = np.array([1.0 if (a, b) == (0, 0) else 0.0 for _, a, b in dn.labels])
    assert np.allclose(dn.basis @ const, 1.0)
    assert np.max(np.abs(dn.flux @ const)) <= 1e-8
    assert np.max(np.abs(dn.matrix - dn.matrix.T)) <= 1e-8
    assert np.max(np.abs(dn.matrix.imag)) <= 1e-8


def test_dn_self_adjoint(dn_pair24):
    dn1, _ = dn_pair24
    M = dn1.matrix
    assert np.linalg.norm(M - M.conj().T) <= 1e-6 * np.linalg.norm(M)
    assert np.all(np.isfinite(M))


def test_partial_restriction(dn_pair24):
    dn1, dn2 = dn_pair24
    p = restrict_partial(dn1, 0.1)
    assert p.faces == (0, 1, 2, 3, 4)
    top = [i for i, lab in enumerate(dn1.labels) if lab[0] == 5]
    assert len(p.rows) == 150 - len(top)
    assert not set(top) & set(p.rows.tolist())
    assert np.array_equal(p.matrix, dn1.matrix[p.rows])
    diff_then = restrict_partial(dn1 - dn2, 0.1)
    then_diff = restrict_partial(dn1, 0.1) - restrict_partial(dn2, 0.1)
    assert np.array_equal(diff_then.flux, then_diff.flux)
    with pytest.raises(ValueError):
        restrict_partial(dn1, 0.5)


def test_partial_norm_not_larger(dn_pair24):
    dn1, dn2 = dn_pair24
    full = dn1 - dn2
    part = restrict_partial(dn1, 0.1) - restrict_partial(dn2, 0.1)
    for orders in ((0.5, 1.5), (-0.5, 0.5)):
        assert dn_operator_norm(part, orders) <= dn_operator_norm(full, orders) * (1 + 1e-12)


def test_operator_norm_basic(dn_pair24):
    dn1, dn2 = dn_pair24
    assert dn_operator_norm(dn1 - dn1) == 0.0
    d = dn1 - dn2
    n = dn_operator_norm(d)
    assert n > 0
    assert abs(dn_operator_norm(2 * d) - 2 * n) <= 1e-12 * n
    p = restrict_partial(dn1, 0.1) - restrict_partial(dn2, 0.1)
    assert abs(dn_operator_norm(2 * p) - 2 * dn_operator_norm(p)) <= 1e-12 * dn_operator_norm(p)


def test_identical_pairs_have_zero_norm(grid24):
    p = sample_admissible_pair(grid24, seed=4, eps_p=0.0)
    d = dn_map(p.W1.W, p.q1.q, grid24) - dn_map(p.W2.W, p.q2.q, grid24)
    assert dn_operator_norm(d) <= 1e-10


def test_basis_mismatch(grid24, dn_pair24):
    small = dn_map(zeros(grid24, vector=True), zeros(grid24), grid24, 2)
    with pytest.raises(ValueError):
        dn_pair24[0] - small


def test_norm_monotone_in_perturbation(grid16):
    norms = []
    for eps in (0.02, 0.05, 0.1, 0.2, 0.4):
        p = sample_admissible_pair(grid16, seed=0, eps_p=eps)
        norms.append(dn_operator_norm(dn_map(p.W1.W, p.q1.q, grid16) - dn_map(p.W2.W, p.q2.q, grid16)))
    assert all(b >= a for a, b in zip(norms, norms[1:]))


def test_dn_roundtrip(tmp_path, dn_pair24):
    dn1, _ = dn_pair24
    save_dn_map(tmp_path / "dn", dn1)
    back = load_dn_map(tmp_path / "dn")
    assert np.allclose(back.matrix, dn1.matrix, rtol=1e-6, atol=1e-6 * np.abs(dn1.matrix).max())
    p = restrict_partial(dn1, 0.1)
    save_dn_map(tmp_path / "pdn", p)
    assert load_dn_map(tmp_path / "pdn").eps0 == 0.1
