"""Admissible magnetic/electric potential pairs and their processing.

Potentials are generated as sums of smooth bumps supported in a ball of
radius R < 1/2 around the centre of the unit cube, so the two members of a
pair agree exactly on (and outside) the cube surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import fftconvolve

from .grid import NDIM, Field, _diff_matrix, discrete_divergence, discrete_gradient, load_snapshot, \
    save_snapshot

CENTER = np.array([0.5, 0.5, 0.5])
SIGMA0_MAX = 1.0 / (4 * NDIM + 6)
MOLLIFIER_SCALE = 0.25  # length unit of the mollifier support at |zeta| = 1


@dataclass(frozen=True)
class MagneticPotential:
    W: Field
    bound_M: float
    support_R: float


@dataclass(frozen=True)
class ElectricPotential:
    q: Field
    bound_M: float
    support_R: float


@dataclass(frozen=True)
class PotentialPair:
    W1: MagneticPotential
    q1: ElectricPotential
    W2: MagneticPotential
    q2: ElectricPotential
    boundary_agreement: bool
    manifest: dict

    @property
    def grid(self):
        return self.W1.W.grid


def _radius(grid, center=CENTER):
    return np.sqrt(np.sum((grid.coords - center[:, None, None, None]) ** 2, axis=0))


def _envelope(grid, R):
    t = _radius(grid) / R
    return np.where(t < 1.0, (1.0 - np.minimum(t, 1.0) ** 2) ** 4, 0.0)


def bound_quantities(W):
    """Nodewise maxima of |W|, |∇W| (Frobenius) and |div W|."""
    v = W.values
    grid = W.grid
    jac = np.stack([discrete_gradient(Field(grid, v[a])).values for a in range(NDIM)])
    return (float(np.max(np.linalg.norm(v, axis=0))),
            float(np.max(np.sqrt(np.sum(jac ** 2, axis=(0, 1))))),
            float(np.max(np.abs(discrete_divergence(W).values))))


def _scalar_bound(q):
    grad = discrete_gradient(q).values
    return max(float(np.max(np.abs(q.values))), float(np.max(np.linalg.norm(grad, axis=0))))


def _vector_bumps(grid, rng, R, count):
    x = grid.coords
    env = _envelope(grid, R)
    out = np.zeros((NDIM,) + grid.shape)
    for _ in range(count):
        c = CENTER + rng.uniform(-1, 1, NDIM) * 0.3 * R / np.sqrt(NDIM)
        sig = rng.uniform(0.22, 0.33) * R
        a = rng.normal(size=NDIM)
        B = 0.5 * rng.normal(size=(NDIM, NDIM))
        d = (x - c[:, None, None, None]) / sig
        gauss = np.exp(-0.5 * np.sum(d ** 2, axis=0))
        direction = a[:, None, None, None] + np.einsum("ij,j...->i...", B, d)
        out += gauss * direction
    return out * env


def _scalar_bumps(grid, rng, R, count):
    x = grid.coords
    env = _envelope(grid, R)
    out = np.zeros(grid.shape)
    for _ in range(count):
        c = CENTER + rng.uniform(-1, 1, NDIM) * 0.3 * R / np.sqrt(NDIM)
        sig = rng.uniform(0.22, 0.33) * R
        d = (x - c[:, None, None, None]) / sig
        gauss = np.exp(-0.5 * np.sum(d ** 2, axis=0))
        out += gauss * (rng.normal() + 0.3 * np.einsum("i,i...->...", rng.normal(size=NDIM), d))
    return out * env


def sample_admissible_pair(grid, M=1.0, R=0.45, seed=0, eps_p=0.1, perturb="both"):
    """Draw a deterministic pair (W1,q1), (W2,q2) in the admissible family.

    W1 and q1 are sums of 3-6 bumps scaled so that their bound quantities
    reach M/2; the perturbations are single bumps scaled the same way and
    multiplied by eps_p.  `perturb` selects which potentials differ:
    "both", "W" or "q".
    """
    if R >= 0.5:
        raise ValueError(f"support radius R={R} must be < 0.5")
    if eps_p < 0:
        raise ValueError("perturbation scale must be nonnegative")
    if perturb not in ("both", "W", "q"):
        raise ValueError(f"unknown perturbation target {perturb!r}")
    rng = np.random.default_rng(seed)
    n_w = int(rng.integers(3, 7))
    n_q = int(rng.integers(3, 7))
    W1 = _vector_bumps(grid, rng, R, n_w)
    q1 = _scalar_bumps(grid, rng, R, n_q)
    W1 *= 0.5 * M / max(bound_quantities(Field(grid, W1)))
    q1 *= 0.5 * M / _scalar_bound(Field(grid, q1))

    prng = np.random.default_rng([seed, 1])
    dW = _vector_bumps(grid, prng, R, 1)
    dq = _scalar_bumps(grid, prng, R, 1)
    dW *= 0.5 * M / max(bound_quantities(Field(grid, dW)))
    dq *= 0.5 * M / _scalar_bound(Field(grid, dq))
    W2 = W1 + eps_p * dW if perturb in ("both", "W") else W1.copy()
    q2 = q1 + eps_p * dq if perturb in ("both", "q") else q1.copy()

    fields = [Field(grid, W1, R), Field(grid, W2, R)]
    for f in fields:
        if max(bound_quantities(f)) > M * (1 + 1e-12):
            raise ValueError("generated magnetic potential exceeds the bound M")
    for q in (q1, q2):
        if np.max(np.abs(q)) > M * (1 + 1e-12):
            raise ValueError("generated electric potential exceeds the bound M")
    manifest = {"M": M, "R": R, "seed": int(seed), "eps_p": float(eps_p), "perturb": perturb}
    return PotentialPair(
        MagneticPotential(fields[0], M, R), ElectricPotential(Field(grid, q1, R), M, R),
        MagneticPotential(fields[1], M, R), ElectricPotential(Field(grid, q2, R), M, R),
        boundary_agreement=_agree_on_boundary(W1, W2, grid), manifest=manifest)


def _agree_on_boundary(W1, W2, grid):
    nodes = tuple(grid.boundary.nodes.T)
    return bool(np.all(W1[(slice(None),) + nodes] == W2[(slice(None),) + nodes]))


def supported_in_ball(f, R, center=CENTER):
    v = f.values if not f.is_vector else np.linalg.norm(f.values, axis=0)
    return bool(np.all(v[_radius(f.grid, center) > R] == 0))


def mollifier_kernel(grid, radius):
    """(1-|y|^2)^4 on the ball of the given radius, unit discrete mass."""
    h = grid.spacing
    m = int(np.floor(radius / h))
    ax = h * np.arange(-m, m + 1)
    Y = np.sqrt(ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2) / radius
    K = np.where(Y < 1, (1 - np.minimum(Y, 1) ** 2) ** 4, 0.0)
    return K / (K.sum() * h ** 3)


def mollify_split(W, zeta_mag, sigma0, scale=MOLLIFIER_SCALE, aggressive=False):
    """Split W = W♯ + W♭ with W♯ the convolution at scale `scale`·|ζ|^{-σ0}."""
    if zeta_mag <= 1:
        raise ValueError("|zeta| must exceed 1")
    limit = 1.0 if aggressive else SIGMA0_MAX
    if not 0 < sigma0 < limit:
        raise ValueError(f"sigma0={sigma0} outside (0, {limit:.4f})")
    radius = scale * zeta_mag ** (-sigma0)
    K = mollifier_kernel(W.grid, radius)
    h3 = W.grid.spacing ** 3
    v = W.values
    if W.is_vector:
        sharp = np.stack([fftconvolve(v[a], K, mode="same") * h3 for a in range(NDIM)])
    else:
        sharp = fftconvolve(v, K, mode="same") * h3
    if np.isrealobj(v):
        sharp = np.real(sharp)
    return Field(W.grid, sharp), Field(W.grid, v - sharp)


def extend_potentials(pair):
    """Extension to the box; with supports inside the cube it is the zero extension."""
    if not pair.boundary_agreement:
        raise ValueError("extension requires W1 = W2 on the boundary")
    grid = pair.grid
    i0, i1 = grid.domain_index
    inside = np.zeros(grid.shape, dtype=bool)
    inside[i0:i1 + 1, i0:i1 + 1, i0:i1 + 1] = True

    def ext(f):
        return Field(grid, np.where(inside, f.values, 0.0), f.support_radius)

    W1 = ext(pair.W1.W)
    W2v = np.where(inside, pair.W2.W.values, W1.values)
    return replace(pair, W1=replace(pair.W1, W=W1), W2=replace(pair.W2, W=Field(grid, W2v)),
                   q1=replace(pair.q1, q=ext(pair.q1.q)), q2=replace(pair.q2, q=ext(pair.q2.q)))


def gauge_transform(W, p):
    """W + ∇p for a scalar p vanishing on the cube surface."""
    nodes = tuple(p.grid.boundary.nodes.T)
    if np.max(np.abs(p.values[nodes]), initial=0.0) > 1e-12 * max(np.max(np.abs(p.values)), 1.0):
        raise ValueError("gauge function must vanish on the boundary")
    return W + discrete_gradient(p)


CURL_COMPONENTS = ((0, 1), (0, 2), (1, 2))


def curl(W):
    """Components ∂_j W_k - ∂_k W_j for (j,k) = (1,2), (1,3), (2,3)."""
    g = W.grid
    d = [[discrete_gradient(Field(g, W.values[k])).values[j] for k in range(NDIM)] for j in range(NDIM)]
    return Field(g, np.stack([d[j][k] - d[k][j] for j, k in CURL_COMPONENTS]))


def curl_component(W, j, k):
    """∂_j W_k - ∂_k W_j for any ordered pair (0-based)."""
    c = curl(W).values
    if (j, k) in CURL_COMPONENTS:
        return c[CURL_COMPONENTS.index((j, k))]
    if (k, j) in CURL_COMPONENTS:
        return -c[CURL_COMPONENTS.index((k, j))]
    return np.zeros(W.grid.shape)


def _interior_selector(grid):
    i0, i1 = grid.domain_index
    mask = np.zeros(grid.shape, dtype=bool)
    mask[i0 + 1:i1, i0 + 1:i1, i0 + 1:i1] = True
    return mask


def _wide_laplacian(grid):
    n = grid.cells + 1
    D = _diff_matrix(n, grid.spacing)
    D2 = (D @ D).tocsr()
    I = sp.identity(n, format="csr")
    return (sp.kron(sp.kron(D2, I), I) + sp.kron(sp.kron(I, D2), I) + sp.kron(sp.kron(I, I), D2)).tocsr()


def hodge_gauge_fix(W1, W2, tol=1e-10):
    """Remove the exact part of W1 - W2 by a Dirichlet Poisson solve in the cube.

    α solves div∇α = div(W1 - W2) at interior cube nodes with α = 0 on and
    outside the surface; then W1' = W1 - ∇α/2 and W2' = W2 + ∇α/2.
    """
    grid = W1.grid
    diff = W1 - W2
    mask = _interior_selector(grid)
    idx = np.flatnonzero(mask.ravel())
    A = _wide_laplacian(grid)[idx][:, idx].tocsc()
    rhs = discrete_divergence(diff).values.ravel()[idx]
    alpha = np.zeros(grid.shape)
    if np.any(rhs):
        sol = spla.spsolve(A, rhs)
        res = np.linalg.norm(A @ sol - rhs) / np.linalg.norm(rhs)
        if not np.isfinite(res) or res > tol:
            raise RuntimeError(f"Poisson solve for the gauge fix failed (residual {res:.2e})")
        alpha.ravel()[idx] = sol
    a = Field(grid, alpha)
    ga = discrete_gradient(a)
    return W1 - 0.5 * ga, W2 + 0.5 * ga, a


def save_pair(pair, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_snapshot(directory / "W1", pair.W1.W, "vector")
    save_snapshot(directory / "W2", pair.W2.W, "vector")
    save_snapshot(directory / "q1", pair.q1.q, "scalar")
    save_snapshot(directory / "q2", pair.q2.q, "scalar")
    (directory / "manifest.json").write_text(json.dumps(pair.manifest, indent=2, sort_keys=True))


def load_pair(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    M, R = manifest["M"], manifest["R"]
    W1, _ = load_snapshot(directory / "W1")
    W2, _ = load_snapshot(directory / "W2")
    q1, _ = load_snapshot(directory / "q1")
    q2, _ = load_snapshot(directory / "q2")
    real = [Field(f.grid, np.real(f.values), R) for f in (W1, W2, q1, q2)]
    return PotentialPair(MagneticPotential(real[0], M, R), ElectricPotential(real[2], M, R),
                         MagneticPotential(real[1], M, R), ElectricPotential(real[3], M, R),
                         _agree_on_boundary(real[0].values, real[1].values, real[0].grid), manifest)
