"""Cauchy-transform solver for the transport equation μ·∇u = f.

For μ = γ + iγ̃ the operator μ·∇ acts as ∂_{t1} + i∂_{t2} on every plane
spanned by γ and γ̃, so its inverse is a 2-D convolution with
1/(2π(t1 + i t2)) applied plane by plane.  Planes ("fibers") are sampled on
a square lattice, convolved by FFT with the truncated kernel, and the result
is interpolated back to the grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
from scipy.ndimage import map_coordinates

from .grid import NDIM, Field, partial
from .potentials import mollify_split, MOLLIFIER_SCALE

FIBER_RESOLUTION = 128


@dataclass(frozen=True)
class TransportDirection:
    """μ = γ + iγ̃ with γ, γ̃ orthonormal."""

    gamma: np.ndarray
    gamma_t: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        gt = np.asarray(self.gamma_t, dtype=float)
        if abs(np.linalg.norm(g) - 1) > 1e-12 or abs(np.linalg.norm(gt) - 1) > 1e-12:
            raise ValueError("γ and γ̃ must be unit vectors")
        if abs(g @ gt) > 1e-12:
            raise ValueError("γ and γ̃ must be orthogonal")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "gamma_t", gt)

    @property
    def mu(self):
        return self.gamma + 1j * self.gamma_t

    @property
    def normal(self):
        return np.cross(self.gamma, self.gamma_t)

    @classmethod
    def from_mu(cls, mu):
        mu = np.asarray(mu, dtype=complex)
        return cls(np.real(mu), np.imag(mu))

    @classmethod
    def from_zeta(cls, zeta):
        """Direction √2 ζ/|ζ| of a null vector ζ."""
        zeta = np.asarray(zeta, dtype=complex)
        mu = np.sqrt(2.0) * zeta / np.linalg.norm(zeta)
        re, im = np.real(mu), np.imag(mu)
        # remove rounding so the invariants hold to 1e-12
        re = re / np.linalg.norm(re)
        im = im - (im @ re) * re
        return cls(re, im / np.linalg.norm(im))


@lru_cache(maxsize=8)
def _kernel_hat(n, delta):
    """FFT of the cell-centred kernel 1/(2π z) on a 2n x 2n periodic patch.

    Offsets between two samples of an n x n plane lie in (-n, n), so the
    periodic patch reproduces the linear convolution exactly.
    """
    m = 2 * n
    j = np.fft.fftfreq(m, d=1.0 / m) * delta
    z = j[:, None] + 1j * j[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        K = 1.0 / (2 * np.pi * z)
    K[0, 0] = 0.0  # cell average of 1/z over the centred square vanishes by symmetry
    return scipy.fft.fft2(K * delta * delta)


def convolve_plane(f_plane, delta):
    """Apply N_μ^{-1} to samples on an n x n plane lattice of spacing delta."""
    f_plane = np.asarray(f_plane)
    n = f_plane.shape[-1]
    m = 2 * n
    Khat = _kernel_hat(n, float(delta))
    F = scipy.fft.fft2(f_plane, s=(m, m), axes=(-2, -1), workers=-1)
    out = scipy.fft.ifft2(F * Khat, axes=(-2, -1), workers=-1)
    return out[..., :n, :n]


@dataclass
class FiberFrame:
    """Plane lattice covering the box, in coordinates (t3, t1, t2) about the box centre."""

    direction: TransportDirection
    center: np.ndarray
    t_plane: np.ndarray  # in-plane sample positions, shape (n,)
    t_normal: np.ndarray  # plane offsets along γ x γ̃

    @property
    def delta(self):
        return self.t_plane[1] - self.t_plane[0]

    def points(self):
        """World coordinates, shape (3, n_normal, n, n)."""
        d = self.direction
        t3 = self.t_normal[:, None, None]
        t1 = self.t_plane[None, :, None]
        t2 = self.t_plane[None, None, :]
        return (self.center[:, None, None, None]
                + d.gamma[:, None, None, None] * t1
                + d.gamma_t[:, None, None, None] * t2
                + d.normal[:, None, None, None] * t3)


def fiber_frame(grid, direction, resolution=FIBER_RESOLUTION):
    D = np.sqrt(NDIM) * grid.period
    center = np.full(NDIM, grid.box[0] + grid.period / 2)
    delta = D / resolution
    t_plane = -D / 2 + delta * (np.arange(resolution) + 0.5)
    h = grid.spacing
    nn = int(np.ceil(D / (2 * h)))
    t_normal = h * np.arange(-nn, nn + 1)
    return FiberFrame(direction, center, t_plane, t_normal)


def _grid_index(grid, pts):
    return (pts - grid.box[0]) / grid.spacing


def sample_on_fibers(values, grid, frame, order=1):
    idx = _grid_index(grid, frame.points())
    shape = idx.shape[1:]
    flat = idx.reshape(NDIM, -1)
    re = map_coordinates(np.real(values), flat, order=order, mode="constant", cval=0.0)
    if np.iscomplexobj(values):
        re = re + 1j * map_coordinates(np.imag(values), flat, order=order, mode="constant", cval=0.0)
    return re.reshape(shape)


def fibers_to_grid(u_fib, grid, frame):
    """Trilinear interpolation from the (t3, t1, t2) lattice back to the grid nodes."""
    d = frame.direction
    rel = grid.coords - frame.center[:, None, None, None]
    t1 = np.einsum("i,i...->...", d.gamma, rel)
    t2 = np.einsum("i,i...->...", d.gamma_t, rel)
    t3 = np.einsum("i,i...->...", d.normal, rel)
    delta = frame.delta
    c = np.stack([(t3 - frame.t_normal[0]) / (frame.t_normal[1] - frame.t_normal[0]),
                  (t1 - frame.t_plane[0]) / delta,
                  (t2 - frame.t_plane[0]) / delta]).reshape(NDIM, -1)
    out = map_coordinates(np.real(u_fib), c, order=1, mode="nearest")
    out = out + 1j * map_coordinates(np.imag(u_fib), c, order=1, mode="nearest")
    return out.reshape(grid.shape)


def _check_support(values, grid):
    scale = np.max(np.abs(values))
    if scale == 0:
        return
    edge = max(np.max(np.abs(values[0])), np.max(np.abs(values[-1])),
               np.max(np.abs(values[:, 0])), np.max(np.abs(values[:, -1])),
               np.max(np.abs(values[:, :, 0])), np.max(np.abs(values[:, :, -1])))
    if edge > 1e-12 * scale:
        raise ValueError("input is not compactly supported inside the box")


def cauchy_transform(f, direction, resolution=FIBER_RESOLUTION, return_fibers=False):
    """u = N_μ^{-1} f, i.e. the solution of μ·∇u = f decaying along the fibers."""
    if f.is_vector:
        raise ValueError("Cauchy transform acts on scalar fields")
    _check_support(f.values, f.grid)
    frame = fiber_frame(f.grid, direction, resolution)
    if not np.any(f.values):
        u = Field(f.grid, np.zeros(f.grid.shape, dtype=complex))
        return (u, frame, np.zeros((len(frame.t_normal), resolution, resolution), complex)) \
            if return_fibers else u
    f_fib = sample_on_fibers(f.values, f.grid, frame)
    u_fib = np.empty(f_fib.shape, dtype=complex)
    for i in range(0, len(f_fib), 8):
        u_fib[i:i + 8] = convolve_plane(f_fib[i:i + 8], frame.delta)
    u = Field(f.grid, fibers_to_grid(u_fib, f.grid, frame))
    return (u, frame, u_fib) if return_fibers else u


def directional_derivative(u, direction):
    """μ·∇u with centred differences on the grid."""
    mu = direction.mu
    return sum(mu[a] * _partial(u, a) for a in range(NDIM))


def _partial(field, a):
    return partial(field.values, field.grid, a)


def transport_residual(u, f, direction, mask=None):
    """‖μ·∇u - f‖ / ‖f‖ on the grid (optionally over a node mask)."""
    mu = direction.mu
    r = sum(mu[a] * _partial(u, a) for a in range(NDIM)) - f.values
    fv = f.values
    if mask is not None:
        r, fv = r[mask], fv[mask]
    return float(np.linalg.norm(r) / np.linalg.norm(fv))


def plane_residual(u_plane, f_plane, delta, margin=2):
    """‖(∂_1 + i∂_2)u - f‖/‖f‖ with centred differences on a plane lattice."""
    du1 = (u_plane[..., 2:, 1:-1] - u_plane[..., :-2, 1:-1]) / (2 * delta)
    du2 = (u_plane[..., 1:-1, 2:] - u_plane[..., 1:-1, :-2]) / (2 * delta)
    r = du1 + 1j * du2 - f_plane[..., 1:-1, 1:-1]
    sl = (Ellipsis, slice(margin, -margin), slice(margin, -margin))
    return float(np.linalg.norm(r[sl]) / np.linalg.norm(f_plane[..., 1:-1, 1:-1][sl]))


# ---------------------------------------------------------------- CGO phase

def cutoff(grid, zeta_mag, theta, center=(0.5, 0.5, 0.5), inner=0.55, outer=0.92):
    """χ_{|ζ|}(x) = χ((x - c)/|ζ|^θ) with a tensor-product plateau cutoff.

    χ equals 1 on the cube of half side `inner` and vanishes outside the
    cube of half side `outer`; the transition is a C^∞ smooth step.
    """
    scale = zeta_mag ** theta
    out = np.ones(grid.shape)
    for a in range(NDIM):
        t = np.abs(grid.coords[a] - center[a]) / scale
        out = out * _smooth_step((outer - t) / (outer - inner))
    return out


def _smooth_step(s):
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def phase_sharp(W, zeta, sigma0, theta, resolution=FIBER_RESOLUTION, mollifier_scale=MOLLIFIER_SCALE,
                aggressive=False):
    """φ♯ = N_μ^{-1}(-μ·W♯) for μ = √2ζ/|ζ|, and the amplitude exp(iχ_{|ζ|}φ♯)."""
    zeta = np.asarray(zeta, dtype=complex)
    zmag = float(np.linalg.norm(zeta))
    direction = TransportDirection.from_zeta(zeta)
    if not np.any(W.values):
        zero = Field(W.grid, np.zeros(W.grid.shape, dtype=complex))
        return zero, Field(W.grid, np.ones(W.grid.shape, dtype=complex))
    W_sharp, _ = mollify_split(W, zmag, sigma0, scale=mollifier_scale, aggressive=aggressive)
    rhs = -np.einsum("i,i...->...", direction.mu, W_sharp.values)
    phi = cauchy_transform(Field(W.grid, rhs), direction, resolution)
    chi = cutoff(W.grid, zmag, theta)
    amp = np.exp(1j * chi * phi.values)
    return phi, Field(W.grid, amp)


# ---------------------------------------------------------------- lemma checks

def nonlinear_fourier_residual(W, direction, xi, resolution=FIBER_RESOLUTION):
    """Both sides of ∫ μ·W e^{iξ·x} e^{iΦ} = ∫ μ·W e^{iξ·x} with Φ = N_μ^{-1}(-μ·W)."""
    xi = np.asarray(xi, dtype=float)
    if abs(xi @ direction.gamma) > 1e-10 or abs(xi @ direction.gamma_t) > 1e-10:
        raise ValueError("ξ must be orthogonal to γ and γ̃")
    grid = W.grid
    muW = np.einsum("i,i...->...", direction.mu, W.values)
    if not np.any(muW):
        return 0.0, 0.0, 0.0
    Phi = cauchy_transform(Field(grid, -muW), direction, resolution).values
    plane = np.exp(1j * np.einsum("i,i...->...", xi, grid.coords))
    h3 = grid.spacing ** 3
    lhs = complex(np.sum(muW * plane * np.exp(1j * Phi)) * h3)
    rhs = complex(np.sum(muW * plane) * h3)
    rel = abs(lhs - rhs) / max(abs(rhs), np.finfo(float).eps)
    return lhs, rhs, rel


def rotate_direction(direction, angle, axis=None):
    """Rotate both γ and γ̃ by `angle` about `axis` (default: γ x γ̃ + γ)."""
    if axis is None:
        axis = direction.normal + direction.gamma
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    Rm = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
    g = Rm @ direction.gamma
    gt = Rm @ direction.gamma_t
    gt = gt - (gt @ g) * g
    return TransportDirection(g / np.linalg.norm(g), gt / np.linalg.norm(gt))


def mu_continuity_probe(W, dir1, dir2, t=1.0, resolution=FIBER_RESOLUTION, exponential=False):
    """‖N_{μ1}^{-1}(-μ1·W) - N_{μ2}^{-1}(-μ2·W)‖_∞ / |μ1 - μ2|^t."""
    gap = np.linalg.norm(dir1.mu - dir2.mu)
    if gap == 0:
        raise ValueError("directions coincide; the ratio is undefined")
    grid = W.grid
    u = []
    for d in (dir1, dir2):
        rhs = -np.einsum("i,i...->...", d.mu, W.values)
        v = cauchy_transform(Field(grid, rhs), d, resolution).values
        u.append(np.exp(1j * v) if exponential else v)
    return float(np.max(np.abs(u[0] - u[1])) / gap ** t)
