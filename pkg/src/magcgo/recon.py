"""Fourier estimates of d(W1 - W2) and q1 - q2 from boundary pairings.

Fourier convention: F(f)(η) = ∫ f(x) e^{iη·x} dx, so that boundary pairings
of CGO pairs with ζ1 - conj(ζ2) = 2ξ estimate F(·)(2ξ).

Green's identity for the Hermitian forms of the two operators gives, for
solutions u1, u2 of H1 u1 = 0, H2 u2 = 0,

    ∫_∂Ω conj(u2)(Λ1 - Λ2)u1 = i∫ (W1-W2)·(u1∇ū2 - ū2∇u1) + (W1²-W2²)u1ū2 + (q1-q2)u1ū2.
"""

from __future__ import annotations

import csv
import hashlib
import io
import threading
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .cgo import DELTA, H0_INV, SIGMA0, THETA, build_cgo, frequency_pair
from .forward import DNMap, PartialDNMap, _trap
from .grid import NDIM, Field
from .potentials import curl, curl_component

PROJECTION_TOL = 0.10
R1_DEFAULT = 0.1


class IllRepresentedTraceError(ValueError):
    """A CGO trace is not captured by the DN basis; raise m_max."""


class WedgeError(ValueError):
    pass


# ---------------------------------------------------------------- wedges

@dataclass(frozen=True)
class WedgeSpec:
    """E_j = {|ξ_3| ≤ r1 ξ_j}; the narrow variant also asks ξ_3 ≥ (r1/2) ξ_j."""

    j: int
    r1: float = R1_DEFAULT
    variant: str = "E"

    def __post_init__(self):
        if self.j not in range(NDIM - 1):
            raise ValueError("wedge axis must be 0 or 1")
        if self.r1 <= 0:
            raise ValueError("r1 must be positive")
        if self.variant not in ("E", "E_tilde"):
            raise ValueError("variant is 'E' or 'E_tilde'")

    def contains(self, xi):
        xi = np.asarray(xi, dtype=float)
        ok = abs(xi[-1]) <= self.r1 * xi[self.j]
        if self.variant == "E_tilde":
            ok = ok and xi[-1] >= 0.5 * self.r1 * xi[self.j]
        return bool(ok)

    def sample(self, rng, count, radius=1.0):
        """Uniform points of the wedge inside the ball of the given radius."""
        out = []
        while len(out) < count:
            p = rng.uniform(-radius, radius, size=NDIM)
            if p @ p <= radius ** 2 and self.contains(p):
                out.append(p)
        return np.array(out)


# ---------------------------------------------------------------- estimate sets

CSV_COLUMNS = ["xi1", "xi2", "xi3", "s", "j", "k", "mode", "re_est", "im_est", "re_truth", "im_truth"]


@dataclass
class FourierEstimateSet:
    records: list = field(default_factory=list)

    def add(self, xi, s, component, estimate, mode, truth=None):
        self.records.append({"xi": np.asarray(xi, dtype=float), "s": float(s),
                             "component": tuple(component), "estimate": complex(estimate),
                             "mode": mode, "truth": None if truth is None else complex(truth)})

    def __len__(self):
        return len(self.records)

    @property
    def estimates(self):
        return np.array([r["estimate"] for r in self.records])

    @property
    def truths(self):
        return np.array([np.nan if r["truth"] is None else r["truth"] for r in self.records])

    @property
    def points(self):
        return np.array([r["xi"] for r in self.records])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            t = r["truth"]
            w.writerow([*(f"{v:.12g}" for v in r["xi"]), f"{r['s']:.12g}", *r["component"], r["mode"],
                        f"{r['estimate'].real:.12g}", f"{r['estimate'].imag:.12g}",
                        "" if t is None else f"{t.real:.12g}", "" if t is None else f"{t.imag:.12g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------- truth oracle

def fourier_at(values, grid, eta):
    """Σ f(x) e^{iη·x} h³ over the nodes (f supported inside the box)."""
    phase = np.exp(1j * np.einsum("i,i...->...", np.asarray(eta, dtype=float), grid.coords))
    return complex(np.sum(values * phase) * grid.spacing ** 3)


def padded_fft_truth(values, grid, pad=2):
    """F on the lattice 2πm/(pad·P) from a zero-padded FFT (nodes start at the box corner)."""
    n = grid.cells
    m = pad * n
    coeffs = np.fft.ifftn(values[:n, :n, :n], s=(m, m, m), axes=(0, 1, 2)) * m ** 3 * grid.spacing ** 3
    k = 2 * np.pi * np.fft.fftfreq(m, d=grid.spacing)
    x0 = grid.box[0]
    shift = np.exp(1j * x0 * (k[:, None, None] + k[None, :, None] + k[None, None, :]))
    return coeffs * shift, k


def _indicator_difference(pair):
    grid = pair.grid
    i0, i1 = grid.domain_index
    inside = np.zeros(grid.shape, dtype=bool)
    inside[i0:i1 + 1, i0:i1 + 1, i0:i1 + 1] = True
    dW = np.where(inside, pair.W1.W.values - pair.W2.W.values, 0.0)
    dq = np.where(inside, pair.q1.q.values - pair.q2.q.values, 0.0)
    return Field(grid, dW), Field(grid, dq)


def truth_norms(pair):
    """L² norms of the curl of I_Ω(W1 - W2) (all components) and of I_Ω(q1 - q2)."""
    dW, dq = _indicator_difference(pair)
    h3 = pair.grid.spacing ** 3
    c = curl(dW).values
    return float(np.sqrt(np.sum(np.abs(c) ** 2) * h3)), float(np.sqrt(np.sum(dq.values ** 2) * h3))


def curl_truth(pair, xi, component):
    dW, _ = _indicator_difference(pair)
    c = curl_component(dW, *component)
    return fourier_at(c, pair.grid, 2 * np.asarray(xi, dtype=float))


def potential_truth(pair, xi):
    _, dq = _indicator_difference(pair)
    return fourier_at(dq.values, pair.grid, 2 * np.asarray(xi, dtype=float))


# ---------------------------------------------------------------- pairing

def boundary_trace(u):
    """Node values on the cube surface of a CGOSolution, Field or array."""
    if hasattr(u, "values") and callable(u.values):
        vals = u.values()
        grid = u.grid
    elif isinstance(u, Field):
        vals, grid = u.values, u.grid
    else:
        return np.asarray(u)
    return vals[tuple(grid.boundary.nodes.T)]


def project_trace(dn, trace):
    """Weighted least-squares coefficients of a boundary trace in the DN basis."""
    dn = dn.parent if isinstance(dn, PartialDNMap) else dn
    w = np.sqrt(dn.grid.boundary.weights)
    coef, *_ = np.linalg.lstsq(dn.basis * w[:, None], trace * w, rcond=None)
    resid = np.linalg.norm(w * (dn.basis @ coef - trace)) / max(np.linalg.norm(w * trace), 1e-300)
    return coef, float(resid)


def boundary_pairing(diff, u1, u2, strict=True):
    """∫ conj(u2) Λ_Δ u1 over the boundary (kept faces only for partial maps).

    u1 is expanded in the DN basis; returns (value, projection residual).
    """
    t1 = boundary_trace(u1)
    t2 = boundary_trace(u2)
    coef, resid = project_trace(diff, t1)
    if strict and resid > PROJECTION_TOL:
        raise IllRepresentedTraceError(f"trace projection residual {resid:.2f} exceeds "
                                       f"{PROJECTION_TOL:.0%}; raise m_max or lower s")
    if not np.any(diff.flux):
        return 0j, resid
    if isinstance(diff, PartialDNMap):
        value = np.vdot(t2[diff.nodes], diff.flux @ coef)
    else:
        value = np.vdot(t2, diff.flux @ coef)
    return complex(value), resid


# ---------------------------------------------------------------- interior side

def cube_weights(grid):
    """Trapezoid weights of the unit-cube nodes, embedded in the full grid."""
    i0, i1 = grid.domain_index
    n = i1 - i0 + 1
    t = _trap(n)
    w = np.zeros(grid.shape)
    w[i0:i1 + 1, i0:i1 + 1, i0:i1 + 1] = t[:, None, None] * t[None, :, None] * t[None, None, :]
    return w * grid.spacing ** 3


def interior_terms(pair, u1, u2):
    """(magnetic term, W² term, q term) of the interior side of the identity."""
    grid = pair.grid
    w = cube_weights(grid)
    v1, v2 = u1.values(), u2.values()
    g1, g2 = u1.gradient(), u2.gradient()
    W1, W2 = pair.W1.W.values, pair.W2.W.values
    dW = W1 - W2
    mag = 1j * np.sum(w * np.sum(dW * (v1 * np.conj(g2) - np.conj(v2) * g1), axis=0))
    sq = np.sum(w * (np.sum(W1 ** 2, axis=0) - np.sum(W2 ** 2, axis=0)) * v1 * np.conj(v2))
    qq = np.sum(w * (pair.q1.q.values - pair.q2.q.values) * v1 * np.conj(v2))
    return complex(mag), complex(sq), complex(qq)


def integral_identity_residual(pair, dn1, dn2, u1, u2, strict=False):
    """Both sides of the boundary/interior identity and their relative mismatch."""
    interior = sum(interior_terms(pair, u1, u2))
    boundary, resid = boundary_pairing(dn1 - dn2, u1, u2, strict=strict)
    scale = max(abs(interior), abs(boundary), 1e-300)
    return {"interior": interior, "boundary": boundary, "relative": abs(interior - boundary) / scale,
            "projection_residual": resid}


# ---------------------------------------------------------------- estimators

@dataclass
class CGOConfig:
    sigma0: float = SIGMA0
    theta: float = THETA
    delta: float = DELTA
    h0_inv: float = H0_INV
    aggressive: bool = False

    def kwargs(self):
        return dict(sigma0=self.sigma0, theta=self.theta, delta=self.delta, h0_inv=self.h0_inv,
                    aggressive=self.aggressive)


class CGOCache:
    """Memo of CGO solutions keyed by potentials, frequency pair and configuration."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(W, q, fp, which, cfg):
        digest = hashlib.sha1(np.ascontiguousarray(W.values).tobytes())
        digest.update(np.ascontiguousarray(q.values).tobytes())
        return (digest.hexdigest(), which, tuple(fp.xi), fp.s, tuple(fp.gamma), tuple(fp.gamma_t),
                tuple(sorted(cfg.kwargs().items())))

    def get(self, W, q, fp, which, cfg):
        key = self._key(W, q, fp, which, cfg)
        with self._lock:
            if key in self._store:
                return self._store[key]
        sol = build_cgo(W, q, fp, which, **cfg.kwargs())
        with self._lock:
            return self._store.setdefault(key, sol)

    def __len__(self):
        return len(self._store)


def _cgo_pair(pair, fp, cfg, cache=None):
    if cache is None:
        return (build_cgo(pair.W1.W, pair.q1.q, fp, 1, **cfg.kwargs()),
                build_cgo(pair.W2.W, pair.q2.q, fp, 2, **cfg.kwargs()))
    return cache.get(pair.W1.W, pair.q1.q, fp, 1, cfg), cache.get(pair.W2.W, pair.q2.q, fp, 2, cfg)


def _restrict(dn, data_mode, eps0):
    from .forward import restrict_partial
    if data_mode == "full":
        return dn
    if data_mode == "partial":
        return dn if isinstance(dn, PartialDNMap) else restrict_partial(dn, eps0)
    raise ValueError(f"unknown data mode {data_mode!r}")


def _anchored_curl(pair, dn_diff, xi, s, mode, comp, cfg, strict, info, cache=None):
    """C_ab = F(∂_a V_b - ∂_b V_a)(2ξ) for γ̃ ∝ e_a ξ_b - e_b ξ_a, V = W1 - W2."""
    fp = frequency_pair(xi, s, mode, comp)
    if mode == "full":
        a, b = fp.component
    else:
        a, b = NDIM - 1, fp.component[0]
    n = np.hypot(xi[a], xi[b])
    total = 0j
    for p in (fp, fp.flipped()):
        u1, u2 = _cgo_pair(pair, p, cfg, cache)
        val, resid = boundary_pairing(dn_diff, u1, u2, strict=strict)
        info["projection_residual"] = max(info.get("projection_residual", 0.0), resid)
        info["below_threshold"] = info.get("below_threshold", False) or u1.diagnostics["below_threshold"]
        total += val / (2 * s)
    return -n * total, (a, b)


def curl_fourier_estimate(pair, dn1, dn2, xi, s, component=(0, 1), data_mode="full",
                          r1=R1_DEFAULT, eps0=0.1, cfg=None, strict=True, return_info=False, cache=None):
    """Estimate of F(I_Ω(∂_j ΔW_k - ∂_k ΔW_j))(2ξ) from boundary pairings of CGO pairs."""
    cfg = cfg or CGOConfig()
    xi = np.asarray(xi, dtype=float)
    j, k = component
    if j == k:
        raise ValueError("component indices must differ")
    if j > k:
        out = curl_fourier_estimate(pair, dn1, dn2, xi, s, (k, j), data_mode, r1, eps0, cfg, strict, True, cache)
        return (-out[0], out[1]) if return_info else -out[0]
    diff = _restrict(dn1, data_mode, eps0) - _restrict(dn2, data_mode, eps0)
    info = {}
    if not np.any(diff.flux):
        return (0j, info) if return_info else 0j
    last = NDIM - 1
    if data_mode == "full":
        value, (a, b) = _anchored_curl(pair, diff, xi, s, "full", (j, k), cfg, strict, info, cache)
        value = value if (a, b) == (j, k) else -value
    elif k == last:
        if not WedgeSpec(j, r1).contains(xi):
            raise WedgeError(f"ξ = {xi} is outside the wedge E_{j}")
        _check_direction(xi, j, r1)
        value, (a, b) = _anchored_curl(pair, diff, xi, s, "partial", (j, last), cfg, strict, info, cache)
        value = -value  # computed for (last, j)
    else:
        for axis in (j, k):
            if not WedgeSpec(axis, r1, "E_tilde").contains(xi):
                raise WedgeError(f"ξ = {xi} is outside the narrow wedge for axis {axis}")
            _check_direction(xi, axis, r1)
        cj, _ = _anchored_curl(pair, diff, xi, s, "partial", (j, last), cfg, strict, info, cache)
        ck, _ = _anchored_curl(pair, diff, xi, s, "partial", (k, last), cfg, strict, info, cache)
        # C_{j3}, C_{k3} are the negatives of the anchored values
        value = (xi[k] / xi[last]) * (-cj) - (xi[j] / xi[last]) * (-ck)
    return (value, info) if return_info else value


def _check_direction(xi, j, r1):
    """γ̃ stays within the cone around e_3 guaranteed by the wedge."""
    gt3 = xi[j] / np.hypot(xi[j], xi[-1])
    if gt3 < 1.0 / np.sqrt(1.0 + r1 ** 2) - 1e-12:
        raise WedgeError("probing direction leaves the admissible cone around e_3")


def _default_component(xi):
    order = np.argsort(-np.abs(xi), kind="stable")
    return tuple(sorted(int(i) for i in order[:2]))


def potential_fourier_estimate(pair, dn1, dn2, xi, s, mode="blind", data_mode="full",
                               r1=R1_DEFAULT, eps0=0.1, cfg=None, strict=True, return_info=False, cache=None):
    """Estimate of F(q1 - q2)(2ξ); oracle mode subtracts the magnetic interior terms."""
    cfg = cfg or CGOConfig()
    if mode not in ("blind", "oracle"):
        raise ValueError("mode is 'blind' or 'oracle'")
    xi = np.asarray(xi, dtype=float)
    diff = _restrict(dn1, data_mode, eps0) - _restrict(dn2, data_mode, eps0)
    info = {}
    if not np.any(diff.flux):
        return (0j, info) if return_info else 0j
    fmode = "full" if data_mode == "full" else "partial"
    if fmode == "full":
        comp = _default_component(xi)
    else:
        comp = (int(np.argmax(xi[:NDIM - 1])), NDIM - 1)
        if not WedgeSpec(comp[0], r1).contains(xi):
            raise WedgeError(f"ξ = {xi} is outside the wedge E_{comp[0]}")
        _check_direction(xi, comp[0], r1)
    fp = frequency_pair(xi, s, fmode, comp)
    u1, u2 = _cgo_pair(pair, fp, cfg, cache)
    value, resid = boundary_pairing(diff, u1, u2, strict=strict)
    info["projection_residual"] = resid
    if mode == "oracle":
        mag, sq, _ = interior_terms(pair, u1, u2)
        info["interior_magnetic"] = mag + sq
        value = value - mag - sq
    return (value, info) if return_info else value


# ---------------------------------------------------------------- continuation

def monomial_exponents(degree, dim=NDIM):
    exps = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(dim), d):
            e = [0] * dim
            for c in combo:
                e[c] += 1
            exps.append(tuple(e))
    return exps


def _design(points, exps):
    points = np.asarray(points, dtype=float)
    return np.stack([np.prod(points ** np.array(e), axis=1) for e in exps], axis=1)


def ball_grid(n=9):
    """Uniform lattice points of the closed unit ball."""
    t = np.linspace(-1, 1, n)
    P = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, NDIM)
    return P[np.sum(P ** 2, axis=1) <= 1 + 1e-12]


@dataclass
class PolynomialContinuation:
    degree: int
    ridge: float
    exponents: list
    coef: np.ndarray

    def __call__(self, points):
        return _design(points, self.exponents) @ self.coef


def continue_from_wedge(points, values, degree=8, ridge=1e-6, eval_points=None):
    """Ridge least-squares polynomial fit on wedge samples, evaluated on the unit ball.

    The ridge penalty acts on the monomial (Taylor) coefficients.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values)
    exps = monomial_exponents(degree)
    if len(points) < 2 * len(exps):
        raise ValueError(f"need at least {2 * len(exps)} samples for degree {degree}, got {len(points)}")
    if np.any(np.sum(points ** 2, axis=1) > 1 + 1e-12):
        raise ValueError("samples must lie in the unit ball")
    A = _design(points, exps)
    k = len(exps)
    aug = np.vstack([A, np.sqrt(ridge) * np.eye(k)])
    rhs = np.concatenate([values, np.zeros(k, dtype=values.dtype)])
    coef, _, rank, sv = np.linalg.lstsq(aug, rhs, rcond=None)
    if rank < k or sv[-1] < 1e-13 * sv[0]:
        raise np.linalg.LinAlgError("fit is rank deficient after ridge; degenerate sample geometry")
    fit = PolynomialContinuation(degree, ridge, exps, coef)
    ev = ball_grid() if eval_points is None else np.asarray(eval_points, dtype=float)
    return ev, fit(ev), fit


def holder_noise_sweep(points, func, noise_levels, degree=8, ridge="noise", trials=20, seed=0):
    """Continuation sup error on the unit ball against noise injected on the samples.

    ridge="noise" ties the penalty to the noise level; a number fixes it.
    Errors are averaged over `trials` noise draws.  Returns (errors, (c, θ, R²)).
    """
    rng = np.random.default_rng(seed)
    points = np.asarray(points, dtype=float)
    ev = ball_grid()
    truth = func(ev)
    clean = func(points)
    errors = []
    for level in noise_levels:
        lam = level if ridge == "noise" else float(ridge)
        errs = []
        for _ in range(trials):
            noise = (rng.standard_normal(len(points)) + 1j * rng.standard_normal(len(points))) / np.sqrt(2)
            _, vals, _ = continue_from_wedge(points, clean + level * noise, degree, lam, ev)
            errs.append(np.max(np.abs(vals - truth)))
        errors.append(float(np.mean(errs)))
    return np.array(errors), holder_fit(noise_levels, errors)


def holder_fit(noise, errors):
    """Fit error ≈ c·noise^θ in log-log coordinates; returns (c, θ, R²)."""
    x = np.log(np.asarray(noise, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    pred = intercept + slope * x
    ss_res = np.sum((y - pred) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(intercept)), float(slope), float(r2)


def n_monomials(degree, dim=NDIM):
    return comb(degree + dim, dim)


# ---------------------------------------------------------------- error metrics

def recovery_error(estimates, truth=None, R=None, bound=2.0, cell_volume=None):
    """Relative sup error over the samples and an H^{-1} error with a tail bound.

    The low-frequency part is Σ |est - truth|²/(1+|η|²)·dη/(2π)³ over η = 2ξ,
    with dη the volume per distinct sample point when the samples cover
    |η| ≤ R.  Since 1/(1+|η|²) < 1/R² beyond R, the tail is at most
    bound²/R² for any bound ≥ the L² norm of the target field (a priori
    2M|Ω|^{1/2} for potentials bounded by M).
    """
    est = estimates.estimates if isinstance(estimates, FourierEstimateSet) else np.asarray(estimates)
    tru = (estimates.truths if truth is None else np.asarray(truth))
    pts = estimates.points if isinstance(estimates, FourierEstimateSet) else None
    err = np.abs(est - tru)
    sup = float(np.max(err) / max(np.max(np.abs(tru)), 1e-300))
    out = {"relative_sup": sup}
    if R is not None:
        eta = 2 * pts if pts is not None else None
        if cell_volume is None:
            n_points = len(np.unique(np.round(eta, 12), axis=0)) if eta is not None else len(err)
            cell_volume = (4.0 / 3.0) * np.pi * R ** 3 / max(n_points, 1)
        denom = 1.0 + (np.sum(eta ** 2, axis=1) if eta is not None else 0.0)
        low = float(np.sum(err ** 2 / denom) * cell_volume / (2 * np.pi) ** 3)
        tail = bound ** 2 / R ** 2
        out.update(low=low, tail=tail, hminus1=float(np.sqrt(low + tail)))
    return out
