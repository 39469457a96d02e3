import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magcgo.cgo import build_cgo, frequency_pair
from magcgo.recon import (CSV_COLUMNS, FourierEstimateSet, WedgeError, WedgeSpec, boundary_pairing, ball_grid,
                          continue_from_wedge, curl_fourier_estimate, curl_truth, fourier_at, holder_fit,
                          integral_identity_residual, monomial_exponents, n_monomials, padded_fft_truth,
                          potential_fourier_estimate, potential_truth, recovery_error)

from conftest import bump

XI = [0.5, 0.3, 0.2]


def test_wedge_membership():
    w = WedgeSpec(0, 0.1)
    assert w.contains([1.0, 0.0, 0.05]) and w.contains([1.0, 0.5, -0.1])
    assert not w.contains([1.0, 0.0, 0.2]) and not w.contains([-1.0, 0.0, 0.0])
    narrow = WedgeSpec(0, 0.1, "E_tilde")
    assert narrow.contains([1.0, 0.0, 0.07]) and not narrow.contains([1.0, 0.0, 0.02])
    with pytest.raises(ValueError):
        WedgeSpec(2)
    with pytest.raises(ValueError):
        WedgeSpec(0, 0.1, "F")


def test_wedge_sampling():
    w = WedgeSpec(1, 0.2)
    pts = w.sample(np.random.default_rng(0), 50, radius=0.5)
    assert pts.shape == (50, 3)
    assert all(w.contains(p) for p in pts)
    assert np.all(np.linalg.norm(pts, axis=1) <= 0.5)


def test_zero_difference_gives_zero(pair24, dn_pair24):
    dn1, _ = dn_pair24
    assert curl_fourier_estimate(pair24, dn1, dn1, XI, 3.0) == 0
    assert potential_fourier_estimate(pair24, dn1, dn1, XI, 3.0) == 0


def test_curl_antisymmetric(pair24, dn_pair24):
    dn1, dn2 = dn_pair24
    a = curl_fourier_estimate(pair24, dn1, dn2, XI, 3.0, (0, 1))
    b = curl_fourier_estimate(pair24, dn1, dn2, XI, 3.0, (1, 0))
    assert abs(a + b) <= 1e-10 * abs(a)


def test_partial_data_wedge_check(pair24, dn_pair24):
    dn1, dn2 = dn_pair24
    with pytest.raises(WedgeError):
        curl_fourier_estimate(pair24, dn1, dn2, [1.0, 0.0, 0.5], 3.0, (0, 2), data_mode="partial")


@pytest.fixture(scope="module")
def cgo_s3(pair24):
    fp = frequency_pair(XI, 3.0)
    return build_cgo(pair24.W1.W, pair24.q1.q, fp, 1), build_cgo(pair24.W2.W, pair24.q2.q, fp, 2)


def test_integral_identity_small_s(pair24, dn_pair24, cgo_s3):
    out = integral_identity_residual(pair24, *dn_pair24, *cgo_s3)
    assert out["relative"] <= 0.05
    assert out["projection_residual"] <= 0.10


def test_boundary_pairing_zero_and_conjugate_symmetry(dn_pair24, cgo_s3):
    dn1, dn2 = dn_pair24
    assert boundary_pairing(dn1 - dn1, *cgo_s3)[0] == 0
    c = np.random.default_rng(0).standard_normal((2, dn1.basis.shape[1]))
    t1, t2 = dn1.basis @ c[0], dn1.basis @ c[1]
    a, ra = boundary_pairing(dn1 - dn2, t1, t2)
    b, _ = boundary_pairing(dn1 - dn2, t2, t1)
    assert ra <= 1e-10
    assert abs(a - np.conj(b)) <= 1e-6 * abs(a)


def test_padded_fft_matches_direct_sum(pair24):
    g = pair24.grid
    v = bump(g, radius=0.4) * (1 + g.coords[0])
    F, k = padded_fft_truth(v, g)
    for idx in ((0, 0, 0), (3, -2, 5), (-7, 1, 0)):
        eta = [k[i] for i in idx]
        assert abs(F[idx] - fourier_at(v, g, eta)) <= 1e-10 * abs(F[0, 0, 0])


def test_truth_is_zero_for_equal_pair(grid24):
    from magcgo.potentials import sample_admissible_pair
    p = sample_admissible_pair(grid24, seed=2, eps_p=0.0)
    assert curl_truth(p, XI, (0, 1)) == 0 and potential_truth(p, XI) == 0


def test_curl_estimate_accuracy_small_s(pair24, dn_pair24):
    dn1, dn2 = dn_pair24
    for xi in (XI, [1.0, 0.2, 0.05]):
        est = curl_fourier_estimate(pair24, dn1, dn2, xi, 3.0)
        truth = curl_truth(pair24, xi, (0, 1))
        assert abs(est - truth) <= 0.15 * abs(truth)


def test_oracle_potential_beats_blind(pair24, dn_pair24):
    dn1, dn2 = dn_pair24
    truth = potential_truth(pair24, XI)
    oracle = potential_fourier_estimate(pair24, dn1, dn2, XI, 2.0, "oracle")
    blind = potential_fourier_estimate(pair24, dn1, dn2, XI, 2.0, "blind")
    assert abs(oracle - truth) <= 0.1 * abs(truth)
    assert abs(blind - truth) >= 5 * abs(oracle - truth)


def test_monomial_count():
    for d in range(6):
        assert len(monomial_exponents(d)) == n_monomials(d)
    assert len(set(monomial_exponents(4))) == n_monomials(4)


def _wedge_points(count=200, seed=0):
    return WedgeSpec(0, 0.3).sample(np.random.default_rng(seed), count)


def test_continuation_zero_and_polynomial():
    pts = _wedge_points()
    ev, vals, _ = continue_from_wedge(pts, np.zeros(len(pts), dtype=complex), degree=3, ridge=0.0)
    assert not np.any(vals)

    def poly(p):
        x, y, z = p.T
        return 1 - 2j * x + x * y * z + 3 * z ** 2 - y ** 3

    ev, vals, fit = continue_from_wedge(pts, poly(pts), degree=3, ridge=0.0)
    assert np.max(np.abs(vals - poly(ev))) <= 1e-8
    assert len(ev) == len(ball_grid())


def test_continuation_rejects():
    pts = _wedge_points(20)
    with pytest.raises(ValueError):
        continue_from_wedge(pts, np.zeros(20), degree=3)
    with pytest.raises(ValueError):
        continue_from_wedge(np.full((50, 3), 1.0), np.zeros(50), degree=1)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(1e-3, 1e3), theta=st.floats(0.05, 2.0))
def test_holder_fit_recovers_power_law(c, theta):
    noise = np.logspace(-8, -2, 7)
    got_c, got_theta, r2 = holder_fit(noise, c * noise ** theta)
    assert abs(got_theta - theta) <= 1e-8 and abs(got_c / c - 1) <= 1e-6 and r2 >= 1 - 1e-12


def _estimate_set(values, truth):
    es = FourierEstimateSet()
    pts = _wedge_points(len(values), seed=3)
    for p, v, t in zip(pts, values, truth):
        es.add(p, 3.0, (0, 1), v, "curl", t)
    return es


def test_recovery_error_metrics():
    truth = np.linspace(1, 2, 10) + 0.5j
    exact = recovery_error(_estimate_set(truth, truth), R=2.0)
    assert exact["relative_sup"] == 0 and exact["low"] == 0
    assert exact["hminus1"] == pytest.approx(np.sqrt(exact["tail"]), rel=1e-15)
    assert recovery_error(_estimate_set(truth, truth), R=4.0)["tail"] == pytest.approx(exact["tail"] / 4)
    off = recovery_error(_estimate_set(truth * 1.1, truth), R=2.0)
    assert off["relative_sup"] == pytest.approx(0.1, rel=1e-12)
    assert off["hminus1"] > exact["hminus1"]


def test_csv_layout():
    es = _estimate_set([1 + 2j, 3j], [1.0, None])
    lines = es.to_csv().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS
    assert len(lines) == 3
    assert lines[2].endswith(",,")


def _cubic_on_wedge():
    from magcgo.recon import _design
    rng = np.random.default_rng(0)
    pts = WedgeSpec(0, 0.1).sample(rng, 400)
    coef = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    exps = monomial_exponents(3)
    return pts, lambda p: _design(p, exps) @ coef


def test_continuation_reproduces_cubic_without_ridge():
    pts, poly = _cubic_on_wedge()
    ev, vals, _ = continue_from_wedge(pts, poly(pts), degree=4, ridge=0.0)
    assert np.max(np.abs(vals - poly(ev))) <= 1e-8


@pytest.mark.xfail(strict=True, reason="ridge bias is amplified by continuation off a narrow wedge; see ledger")
def test_continuation_reproduces_cubic_small_ridge():
    pts, poly = _cubic_on_wedge()
    ev, vals, _ = continue_from_wedge(pts, poly(pts), degree=4, ridge=1e-10)
    assert np.max(np.abs(vals - poly(ev))) <= 1e-8
