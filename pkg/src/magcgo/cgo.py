"""Complex frequencies, the conjugated Laplacian and CGO solutions.

Conventions: D = -i∇, Δ_ζ = Δ + 2iζ·∇ and D_ζ = D + ζ.  For ζ·ζ = 0

    e^{-iζ·x} H_{W,q} e^{iζ·x} = -Δ_ζ + 2W·D_ζ + G,   G = W² + D·W + q,

which is the operator P_ζ used below.  Δ_ζ acts on e^{ik·x} by
-|k|² - 2ζ·k, inverted on the offset dual lattice of the periodic box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .grid import NDIM, Field, box_fft, box_ifft, field_norm
from .transport import FIBER_RESOLUTION, TransportDirection, cutoff, phase_sharp

DEFAULT_OFFSET = (0.5, 0.5, 0.5)
OFFSET_CANDIDATES = (
    (0.5, 0.5, 0.5), (0.25, 0.25, 0.25), (0.75, 0.75, 0.75), (0.5, 0.25, 0.75),
    (0.25, 0.75, 0.5), (0.75, 0.5, 0.25), (0.125, 0.375, 0.625), (0.375, 0.625, 0.875),
)
COLLISION_TOL = 1e-8
GMRES_RTOL = 1e-8
GMRES_MAXITER = 500
SIGMA0 = 0.04
THETA = 0.01
DELTA = -0.5
H0_INV = 15.0
THEOREM_LIMIT = 1.0 / (4 * NDIM + 6)


class OffsetCollisionError(RuntimeError):
    """The Faddeev symbol (nearly) vanishes on the chosen dual lattice."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


# ---------------------------------------------------------------- frequency pairs

@dataclass(frozen=True)
class FrequencyPair:
    xi: np.ndarray
    s: float
    gamma_t: np.ndarray
    gamma: np.ndarray
    mode: str
    component: tuple

    @property
    def g(self):
        return float(np.sqrt(max(self.s ** 2 - self.xi @ self.xi, 0.0)))

    @property
    def zeta1(self):
        return -1j * self.s * self.gamma_t + self.g * self.gamma + self.xi

    @property
    def zeta2(self):
        return 1j * self.s * self.gamma_t + self.g * self.gamma - self.xi

    def zeta(self, which):
        if which not in (1, 2):
            raise ValueError("which must be 1 or 2")
        return self.zeta1 if which == 1 else self.zeta2

    @property
    def mu(self):
        return self.gamma + 1j * self.gamma_t

    def flipped(self):
        """The pair for -μ in place of μ̄: same γ̃, opposite γ."""
        return FrequencyPair(self.xi, self.s, self.gamma_t, -self.gamma, self.mode, self.component)

    def to_dict(self):
        return {"xi": self.xi.tolist(), "s": self.s, "gamma_t": self.gamma_t.tolist(),
                "gamma": self.gamma.tolist(), "mode": self.mode, "component": list(self.component)}


def _complete_gamma(gamma_t, xi):
    """Unit vector orthogonal to γ̃ and ξ, from the basis vector with the largest residual."""
    frame = [gamma_t]
    nx = np.linalg.norm(xi)
    if nx > 0:
        frame.append(xi / nx)
    best, best_norm = None, -1.0
    for i in range(NDIM):
        v = np.eye(NDIM)[i]
        for u in frame:
            v = v - (v @ u) * u
        nv = np.linalg.norm(v)
        if nv > best_norm + 1e-12:
            best, best_norm = v, nv
    return best / best_norm


def frequency_pair(xi, s, mode="full", component=(0, 1)):
    """ζ-pair for the frequency ξ at size s.

    mode "full": γ̃ ∝ e_j ξ_k - e_k ξ_j for component (j, k);
    mode "partial": γ̃ ∝ ξ_j e_3 - ξ_3 e_j with j = component[0].
    Components are 0-based axis indices.
    """
    xi = np.asarray(xi, dtype=float)
    s = float(s)
    nx = np.linalg.norm(xi)
    if nx == 0:
        raise ValueError("ξ must be nonzero")
    if s < nx:
        raise ValueError(f"s = {s} < |ξ| = {nx}")
    e = np.eye(NDIM)
    if mode == "full":
        j, k = component
        if j == k:
            raise ValueError("component indices must differ")
        gt = e[j] * xi[k] - e[k] * xi[j]
    elif mode == "partial":
        j = component[0]
        if j == NDIM - 1:
            raise ValueError("partial mode needs j < n")
        component = (j, NDIM - 1)
        gt = xi[j] * e[NDIM - 1] - xi[NDIM - 1] * e[j]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    n = np.linalg.norm(gt)
    if n < 1e-14:
        raise ValueError("degenerate ξ: both named components vanish")
    gt = gt / n
    gamma = _complete_gamma(gt, xi)
    return FrequencyPair(xi, s, gt, gamma, mode, tuple(int(c) for c in component))


def bilinear(a, b):
    return complex(np.sum(np.asarray(a) * np.asarray(b)))


# ---------------------------------------------------------------- Faddeev inverse

def _lattice(grid):
    k = grid.wavenumbers
    return np.stack(np.meshgrid(*k, indexing="ij"))


def faddeev_symbol(grid, zeta):
    K = _lattice(grid)
    return -np.sum(K ** 2, axis=0) - 2 * np.einsum("i,i...->...", np.asarray(zeta), K)


def choose_offset(grid, zeta, preferred=DEFAULT_OFFSET):
    """Offset lattice on which the symbol stays away from zero; min |symbol| reported."""
    tried = []
    for off in (tuple(preferred),) + tuple(o for o in OFFSET_CANDIDATES if o != tuple(preferred)):
        g = grid.with_offset(off)
        m = float(np.min(np.abs(faddeev_symbol(g, zeta))))
        tried.append((off, m))
        if m >= COLLISION_TOL:
            return g, m
        if len(tried) == len(OFFSET_CANDIDATES):
            break
    raise OffsetCollisionError(f"Faddeev symbol vanishes for every candidate offset: {tried}; "
                               "choose a different fourier_offset")


def faddeev_apply_inverse(zeta, g):
    """(Δ + 2iζ·∇)^{-1} g on the periodic box, using the grid's offset lattice."""
    grid = g.grid
    sym = faddeev_symbol(grid, zeta)
    m = float(np.min(np.abs(sym)))
    if m < COLLISION_TOL:
        raise OffsetCollisionError(f"min |symbol| = {m:.2e}; use a different fourier_offset")
    if not np.any(g.values):
        return Field(grid, np.zeros(grid.shape, dtype=complex))
    return Field(grid, box_ifft(box_fft(g.values, grid) / sym, grid))


def faddeev_apply(zeta, g):
    """(Δ + 2iζ·∇) g by spectral multiplication."""
    grid = g.grid
    return Field(grid, box_ifft(box_fft(g.values, grid) * faddeev_symbol(grid, zeta), grid))


# ---------------------------------------------------------------- spectral calculus

def spectral_gradient(values, grid):
    coeffs = box_fft(values, grid)
    out = np.empty((NDIM,) + grid.shape, dtype=complex)
    for a, k in enumerate(grid.wavenumbers):
        shape = [1, 1, 1]
        shape[a] = -1
        out[a] = box_ifft(1j * k.reshape(shape) * coeffs, grid)
    return out


def spectral_divergence(V, grid):
    total = 0
    for a, k in enumerate(grid.wavenumbers):
        shape = [1, 1, 1]
        shape[a] = -1
        total = total + 1j * k.reshape(shape) * box_fft(V[a], grid)
    return box_ifft(total, grid)


def _zero_offset(grid):
    return grid.with_offset((0.0, 0.0, 0.0))


@dataclass
class ConjugatedOperator:
    """P_ζ = -Δ_ζ + 2W·D_ζ + G on a Bloch lattice of the box."""

    W: np.ndarray
    q: np.ndarray
    zeta: np.ndarray
    lattice: object  # grid carrying the Bloch offset used for the unknown
    G: np.ndarray = field(init=False)

    def __post_init__(self):
        per = _zero_offset(self.lattice)
        divW = spectral_divergence(self.W.astype(complex), per)
        self.G = np.sum(self.W ** 2, axis=0) - 1j * divW + self.q

    def perturbation(self, v, grid=None):
        """(2W·D_ζ + G) v."""
        grid = grid or self.lattice
        grad = spectral_gradient(v, grid)
        Dz = -1j * grad + self.zeta[:, None, None, None] * v
        return 2 * np.sum(self.W * Dz, axis=0) + self.G * v

    def apply(self, v, grid=None):
        grid = grid or self.lattice
        lap = box_ifft(box_fft(v, grid) * faddeev_symbol(grid, self.zeta), grid)
        return -lap + self.perturbation(v, grid)

    def apply_amplitude(self, a):
        """P_ζ a for a with a - 1 compactly supported (periodic lattice)."""
        per = _zero_offset(self.lattice)
        return self.apply(a - 1.0, per) + 2 * np.einsum("i,i...->...", self.zeta, self.W) + self.G


def physical_conjugation(W, q, zeta, v_parts):
    """e^{-iζ·x} H (e^{iζ·x} v) through ∇u = e^{iζ·x}(∇v + iζv) and Δu = e^{iζ·x}(∇·V + iζ·V).

    v_parts is a list of (values, grid) whose sum is v; each part is
    differentiated on its own lattice.  Independent of ConjugatedOperator.
    """
    zeta = np.asarray(zeta)
    out = 0
    W = np.asarray(W)
    per = None
    for values, grid in v_parts:
        per = _zero_offset(grid)
        V = spectral_gradient(values, grid) + 1j * zeta[:, None, None, None] * values
        lap = spectral_divergence(V, grid) + 1j * np.einsum("i,i...->...", zeta, V)
        out = out - lap - 2j * np.sum(W * V, axis=0) + (np.sum(W ** 2, axis=0) + q) * values
    divW = spectral_divergence(W.astype(complex), per)
    total = sum(v for v, _ in v_parts)
    return out - 1j * divW * total


# ---------------------------------------------------------------- remainder

def remainder_solve(W, q, fp, which, f, offset=DEFAULT_OFFSET, restart=50, x0=None):
    """Solve P_ζ r = -f via r = Δ_ζ^{-1}[(2W·D_ζ + G) r + f] with restarted GMRES."""
    zeta = fp.zeta(which) if isinstance(fp, FrequencyPair) else np.asarray(fp, dtype=complex)
    Wv = np.real(W.values)
    qv = np.real(q.values)
    grid = W.grid
    lattice, min_symbol = choose_offset(grid, zeta, offset)
    diag = {"offset": list(lattice.fourier_offset), "min_symbol": min_symbol, "iterations": 0,
            "history": [], "converged": True, "final_residual": 0.0}
    fv = f.values if isinstance(f, Field) else np.asarray(f)
    if not np.any(fv):
        return Field(grid, np.zeros(grid.shape, dtype=complex)), diag
    op = ConjugatedOperator(Wv, qv, zeta, lattice)
    sym = faddeev_symbol(lattice, zeta)
    n = grid.cells
    shape = (n, n, n)

    def _expand(x):
        coeffs = box_fft(_pad(x.reshape(shape), grid), lattice)
        return box_ifft(coeffs, lattice)

    def solve_faddeev(v):
        return box_ifft(box_fft(v, lattice) / sym, lattice)

    def matvec(x):
        r = _expand(x)
        return (r - solve_faddeev(op.perturbation(r)))[:n, :n, :n].ravel()

    b = solve_faddeev(fv)[:n, :n, :n].ravel()
    A = spla.LinearOperator((n ** 3, n ** 3), matvec=matvec, dtype=complex)
    history = []
    x0v = None if x0 is None else np.asarray(x0.values if isinstance(x0, Field) else x0)[:n, :n, :n].ravel()
    sol, info = spla.gmres(A, b, x0=x0v, rtol=GMRES_RTOL, atol=0.0, restart=restart,
                           maxiter=GMRES_MAXITER, callback=history.append, callback_type="pr_norm")
    r = _expand(sol)
    res = np.linalg.norm(matvec(sol) - b) / np.linalg.norm(b)
    diag.update(iterations=len(history), history=[float(h) for h in history],
                final_residual=float(res), converged=bool(info == 0 or res <= GMRES_RTOL))
    if not diag["converged"]:
        raise ConvergenceError(f"GMRES stopped at relative residual {res:.2e}", diag["history"])
    return Field(grid, r), diag


def cell_norm(f, delta):
    """L²_δ norm over one period cell (the first N nodes per axis)."""
    g = f.grid
    n = g.cells
    cell = Field(g, _pad(f.values[:n, :n, :n], g))
    return field_norm(cell, "L2_delta", delta)


def _pad(v, grid):
    out = np.zeros(grid.shape, dtype=complex)
    n = grid.cells
    out[:n, :n, :n] = v
    return out


# ---------------------------------------------------------------- CGO

@dataclass
class CGOSolution:
    fp: FrequencyPair
    which: int
    zeta: np.ndarray
    amplitude: Field
    remainder: Field
    phase: Field
    forcing: Field
    diagnostics: dict

    @property
    def grid(self):
        return self.amplitude.grid

    def conjugated(self):
        """a + r."""
        return self.amplitude.values + self.remainder.values

    def values(self):
        """u = e^{iζ·x}(a + r) at the nodes."""
        phase = np.exp(1j * np.einsum("i,i...->...", self.zeta, self.grid.coords))
        return phase * self.conjugated()

    def gradient(self):
        """∇u = e^{iζ·x}(∇v + iζ v) with spectral ∇ on each lattice."""
        lattice = self.grid.with_offset(self.diagnostics["offset"])
        a = self.amplitude.values
        r = self.remainder.values
        Gv = spectral_gradient(a - 1.0, _zero_offset(self.grid)) + spectral_gradient(r, lattice)
        v = a + r
        phase = np.exp(1j * np.einsum("i,i...->...", self.zeta, self.grid.coords))
        return phase * (Gv + 1j * self.zeta[:, None, None, None] * v)

    def save(self, directory):
        from .grid import save_snapshot
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_snapshot(d / "amplitude", self.amplitude)
        save_snapshot(d / "remainder", self.remainder)
        meta = {"fp": self.fp.to_dict(), "which": self.which, "diagnostics": _jsonable(self.diagnostics)}
        (d / "diagnostics.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def build_cgo(W, q, fp, which=1, sigma0=SIGMA0, theta=THETA, delta=DELTA, h0_inv=H0_INV,
              aggressive=False, offset=DEFAULT_OFFSET, resolution=FIBER_RESOLUTION):
    """u = e^{iζ·x}(e^{iχφ♯} + r) for the extended potentials (W, q)."""
    if not -1 < delta < 0:
        raise ValueError("δ must lie in (-1, 0)")
    if not aggressive and not (0 < sigma0 and 0 < theta and sigma0 + theta < THEOREM_LIMIT):
        raise ValueError(f"σ0 + θ must lie below {THEOREM_LIMIT:.4f} (use aggressive=True to override)")
    zeta = fp.zeta(which)
    zmag = float(np.linalg.norm(zeta))
    grid = W.grid
    phi, amp = phase_sharp(W, zeta, sigma0, theta, resolution=resolution, aggressive=aggressive)
    chi = cutoff(grid, zmag, theta)
    edge = max(np.max(chi[0]), np.max(chi[-1]), np.max(chi[:, 0]), np.max(chi[:, -1]),
               np.max(chi[:, :, 0]), np.max(chi[:, :, -1]))
    if edge > 0:
        raise ValueError("cutoff χ_|ζ| reaches the box boundary; enlarge the margin")
    Wv = np.real(W.values)
    qv = np.real(q.values)
    lattice, _ = choose_offset(grid, zeta, offset)
    op = ConjugatedOperator(Wv, qv, zeta, lattice)
    f = Field(grid, op.apply_amplitude(amp.values))
    r, diag = remainder_solve(W, q, zeta, which, f, offset=offset)
    direction = TransportDirection.from_zeta(zeta)
    lattice = grid.with_offset(diag["offset"])
    op = ConjugatedOperator(Wv, qv, zeta, lattice)
    resid = op.apply(r.values) + f.values
    w1 = Field(grid, resid)
    diag.update(
        zeta_norm=zmag, below_threshold=zmag < h0_inv, sigma0=sigma0, theta=theta, delta=delta,
        aggressive=aggressive, mu=[list(map(float, direction.gamma)), list(map(float, direction.gamma_t))],
        forcing_norm=cell_norm(f, delta + 1),
        conjugated_residual=cell_norm(w1, delta + 1),
        r_norm=cell_norm(r, delta),
    )
    diag["relative_conjugated_residual"] = diag["conjugated_residual"] / max(diag["forcing_norm"], 1e-300)
    return CGOSolution(fp, which, zeta, amp, r, phi, f, diag)


def conjugation_check(sol, W, q, region=None):
    """Relative residual of H(e^{iζ·x}(a + r)) = 0 through the physical product-rule route."""
    grid = sol.grid
    lattice = grid.with_offset(sol.diagnostics["offset"])
    parts = [(sol.amplitude.values - 1.0, _zero_offset(grid)), (sol.remainder.values, lattice)]
    Wv = np.real(W.values)
    qv = np.real(q.values)
    res = physical_conjugation(Wv, qv, sol.zeta, parts)
    # the constant 1 in the amplitude: H e^{iζx} / e^{iζx} = -ζ·ζ + 2W·ζ + G, with ζ·ζ = 0
    per = _zero_offset(grid)
    divW = spectral_divergence(Wv.astype(complex), per)
    res = res + 2 * np.einsum("i,i...->...", sol.zeta, Wv) + np.sum(Wv ** 2, axis=0) - 1j * divW + qv
    scale = np.abs(sol.forcing.values)
    if region is None:
        i0, i1 = grid.domain_index
        region = (slice(i0 + 1, i1), ) * NDIM
    return float(np.linalg.norm(res[region]) / max(np.linalg.norm(scale[region]), 1e-300))
