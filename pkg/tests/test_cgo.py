import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magcgo.cgo import (OffsetCollisionError, bilinear, build_cgo, cell_norm, choose_offset, conjugation_check,
                        faddeev_apply, faddeev_apply_inverse, faddeev_symbol, frequency_pair, remainder_solve)
from magcgo.grid import Field
from magcgo.potentials import extend_potentials

from conftest import bump, zeros

XI = [0.5, 0.3, 0.2]


@settings(max_examples=100, deadline=None)
@given(xi=st.lists(st.floats(-3, 3), min_size=3, max_size=3), extra=st.floats(0, 50),
       mode=st.sampled_from(["full", "partial"]), comp=st.sampled_from([(0, 1), (0, 2), (1, 2), (1, 0)]))
def test_null_condition(xi, extra, mode, comp):
    xi = np.array(xi)
    j, k = comp
    if mode == "partial":
        k = 2
        if j == 2:
            j = 0
    if np.hypot(xi[j], xi[k]) < 1e-3:
        return
    s = np.linalg.norm(xi) + extra + 1e-3
    fp = frequency_pair(xi, s, mode, (j, k))
    for z in (fp.zeta1, fp.zeta2):
        assert abs(bilinear(z, z)) <= 1e-12 * s ** 2
        assert abs(np.linalg.norm(z) - np.sqrt(2) * s) <= 1e-12 * s
    assert np.allclose(fp.zeta1 + fp.zeta2.conj(), 2 * fp.g * fp.gamma - 2j * s * fp.gamma_t, atol=1e-12 * s)
    assert abs(fp.gamma @ fp.gamma_t) <= 1e-12 and abs(fp.gamma @ xi) <= 1e-12 * max(1, np.linalg.norm(xi))


def test_frequency_pair_examples():
    fp = frequency_pair([0.0, 0.6, 0.8], 1.0)
    assert fp.g == 0.0
    fp = frequency_pair([1.0, 0, 0], 5.0, "full", (0, 1))
    assert np.allclose(fp.gamma_t, [0, -1, 0])
    assert np.allclose(fp.gamma, [0, 0, 1])
    assert fp.g == pytest.approx(np.sqrt(24))
    assert np.allclose(fp.flipped().gamma, -fp.gamma)


def test_frequency_pair_rejects():
    with pytest.raises(ValueError):
        frequency_pair([0, 0, 1.0], 5.0, "full", (0, 1))
    with pytest.raises(ValueError):
        frequency_pair([3.0, 4.0, 0], 4.9)
    with pytest.raises(ValueError):
        frequency_pair([0, 0, 0], 5.0)
    with pytest.raises(ValueError):
        frequency_pair([1.0, 0, 0], 5.0, "partial", (2,))


def test_faddeev_round_trip(grid24):
    zeta = frequency_pair(XI, 20.0).zeta1
    lattice, m = choose_offset(grid24, zeta)
    assert m > 0
    rng = np.random.default_rng(0)
    v = Field(lattice, rng.standard_normal(grid24.shape) + 1j * rng.standard_normal(grid24.shape))
    n = grid24.cells
    back = faddeev_apply(zeta, faddeev_apply_inverse(zeta, v)).values
    assert np.max(np.abs(back[:n, :n, :n] - v.values[:n, :n, :n])) <= 1e-10


def test_faddeev_single_mode(grid24):
    zeta = frequency_pair(XI, 20.0).zeta1
    lattice, _ = choose_offset(grid24, zeta)
    k = np.array([lattice.wavenumbers[0][3], lattice.wavenumbers[1][-2], lattice.wavenumbers[2][5]])
    mode = np.exp(1j * np.einsum("i,i...->...", k, lattice.coords))
    sym = -k @ k - 2 * zeta @ k
    out = faddeev_apply_inverse(zeta, Field(lattice, mode)).values
    assert np.max(np.abs(out - mode / sym)) <= 1e-12 * np.max(np.abs(mode / sym))
    assert np.isclose(faddeev_symbol(lattice, zeta)[3, -2, 5], sym, rtol=1e-14)


def test_faddeev_collision_on_periodic_lattice(grid24):
    zeta = frequency_pair(XI, 20.0).zeta1
    per = grid24.with_offset((0, 0, 0))
    with pytest.raises(OffsetCollisionError):
        faddeev_apply_inverse(zeta, Field(per, np.ones(per.shape)))


def test_remainder_zero_forcing(pair24):
    fp = frequency_pair(XI, 20.0)
    r, diag = remainder_solve(pair24.W1.W, pair24.q1.q, fp, 1, zeros(pair24.grid))
    assert not np.any(r.values)
    assert diag["iterations"] == 0


def test_remainder_free_is_faddeev_inverse(grid24):
    fp = frequency_pair(XI, 20.0)
    f = Field(grid24, bump(grid24) * (1 + 1j * grid24.coords[1]))
    r, diag = remainder_solve(zeros(grid24, vector=True), zeros(grid24), fp, 1, f)
    lattice = grid24.with_offset(diag["offset"])
    ref = faddeev_apply_inverse(fp.zeta1, Field(lattice, f.values)).values
    n = grid24.cells
    assert np.max(np.abs(r.values[:n, :n, :n] - ref[:n, :n, :n])) <= 1e-8 * np.max(np.abs(ref))


def test_remainder_restart_independent(pair24):
    ext = extend_potentials(pair24)
    fp = frequency_pair(XI, 20.0)
    f = Field(pair24.grid, bump(pair24.grid).astype(complex))
    a, _ = remainder_solve(ext.W1.W, ext.q1.q, fp, 1, f, restart=20)
    b, _ = remainder_solve(ext.W1.W, ext.q1.q, fp, 1, f, restart=60)
    assert cell_norm(Field(a.grid, a.values - b.values), -0.5) <= 1e-6 * cell_norm(a, -0.5)


def test_build_cgo_free(grid24):
    fp = frequency_pair(XI, 20.0)
    sol = build_cgo(zeros(grid24, vector=True), zeros(grid24), fp)
    assert np.all(sol.amplitude.values == 1)
    assert not np.any(sol.remainder.values)


def test_build_cgo_residuals(pair24):
    ext = extend_potentials(pair24)
    fp = frequency_pair(XI, 20.0)
    sol = build_cgo(ext.W1.W, ext.q1.q, fp, 1)
    d = sol.diagnostics
    assert d["relative_conjugated_residual"] <= 1e-6
    assert d["below_threshold"] == (d["zeta_norm"] < 15)
    assert conjugation_check(sol, ext.W1.W, ext.q1.q) <= 1e-5
    u = sol.values()
    assert np.all(np.isfinite(u)) and np.all(np.isfinite(sol.gradient()))


def test_build_cgo_parameter_guard(pair24):
    fp = frequency_pair(XI, 20.0)
    with pytest.raises(ValueError):
        build_cgo(pair24.W1.W, pair24.q1.q, fp, sigma0=0.05, theta=0.02)
    with pytest.raises(ValueError):
        build_cgo(pair24.W1.W, pair24.q1.q, fp, delta=-1.0)
