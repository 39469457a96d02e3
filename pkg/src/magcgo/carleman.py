"""Both sides of the boundary Carleman estimate for H = (D + W)² + q with linear weights.

For u vanishing on ∂Ω and φ = -γ̃·x,

    -h(∂_νφ e^{φ/h}∂_νu | e^{φ/h}∂_νu)_{∂Ω-} + ‖e^{φ/h} h∇u‖²
        ≤ C h²‖e^{φ/h} H u‖² + h(∂_νφ e^{φ/h}∂_νu | e^{φ/h}∂_νu)_{∂Ω+}

where ∂Ω- = {∂_νφ < 0} and ∂Ω+ is the rest.  The terms are evaluated by
trapezoid quadrature on the unit-cube nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import _trap, _values, assemble_operator
from .grid import FACES, NDIM, Field


class BoundaryTraceError(ValueError):
    pass


# ---------------------------------------------------------------- weights

@dataclass(frozen=True)
class LinearWeight:
    """φ(x) = x·direction."""

    direction: np.ndarray

    def gradient(self, x):
        return np.broadcast_to(np.asarray(self.direction, dtype=float), np.shape(x))

    def hessian(self, x):
        return np.zeros(np.shape(x)[:-1] + (NDIM, NDIM))


@dataclass(frozen=True)
class QuadraticWeight:
    """φ(x) = |x - center|², a convex weight that is not limiting."""

    center: tuple = (0.0, 0.0, 0.0)

    def gradient(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - np.asarray(self.center))

    def hessian(self, x):
        return np.broadcast_to(2.0 * np.eye(NDIM), np.shape(x)[:-1] + (NDIM, NDIM))


def limiting_weight_residual(weight, samples=64, seed=0):
    """max |<φ''∇φ,∇φ> + <φ''ξ,ξ>| over x in the unit cube and ξ ⊥ ∇φ with |ξ| = |∇φ|."""
    if isinstance(weight, LinearWeight):
        if abs(np.linalg.norm(weight.direction) - 1.0) > 1e-12:
            raise ValueError("linear weight direction must be a unit vector")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(samples, NDIM))
    g = weight.gradient(x)
    H = weight.hessian(x)
    if np.any(np.linalg.norm(g, axis=1) < 1e-12):
        raise ValueError("weight gradient vanishes at a sample point")
    xi = rng.standard_normal((samples, NDIM))
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    xi -= np.sum(xi * gn, axis=1, keepdims=True) * gn
    xi *= (np.linalg.norm(g, axis=1) / np.linalg.norm(xi, axis=1))[:, None]
    val = np.einsum("ni,nij,nj->n", g, H, g) + np.einsum("ni,nij,nj->n", xi, H, xi)
    return float(np.max(np.abs(val)))


# ---------------------------------------------------------------- estimate sides

@dataclass
class CarlemanReport:
    h: float
    gamma_t: np.ndarray
    lhs_minus: float
    lhs_grad: float
    rhs_interior: float
    rhs_plus: float
    fitted_C: float | None = None

    @property
    def lhs_total(self):
        return self.lhs_minus + self.lhs_grad

    @property
    def required_C(self):
        """Smallest C making the estimate hold for this sample."""
        if self.rhs_interior == 0:
            return 0.0 if self.lhs_total - self.rhs_plus <= 0 else np.inf
        return (self.lhs_total - self.rhs_plus) / self.rhs_interior

    def holds(self, C):
        return self.lhs_total <= C * self.rhs_interior + self.rhs_plus + 1e-300

    def to_row(self):
        return {"h": self.h, "g1": self.gamma_t[0], "g2": self.gamma_t[1], "g3": self.gamma_t[2],
                "lhs_minus": self.lhs_minus, "lhs_grad": self.lhs_grad,
                "rhs_interior": self.rhs_interior, "rhs_plus": self.rhs_plus,
                "fitted_C": np.nan if self.fitted_C is None else self.fitted_C}


def _cube(values, grid):
    i0, i1 = grid.domain_index
    sl = slice(i0, i1 + 1)
    return np.asarray(values)[..., sl, sl, sl]


def normal_derivative(u_cube, spacing, axis, side):
    """Second-order one-sided outward normal derivative on one cube face."""
    u = np.moveaxis(u_cube, axis, 0)
    if side == 1:
        d = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * spacing)
    else:
        d = (3 * u[0] - 4 * u[1] + u[2]) / (2 * spacing)
    return d


def carleman_sides(u, W, q, gamma_t, h, operator=None):
    """All four terms of the estimate for φ = -γ̃·x at semiclassical parameter h."""
    if not 0 < h <= 1:
        raise ValueError("semiclassical parameter must lie in (0, 1]")
    grid = u.grid
    gamma_t = np.asarray(gamma_t, dtype=float)
    if abs(np.linalg.norm(gamma_t) - 1) > 1e-12:
        raise ValueError("γ̃ must be a unit vector")
    uv = np.asarray(u.values, dtype=complex)
    uc = _cube(uv, grid)
    scale = max(np.max(np.abs(uc)), 1e-300)
    trace = uv[tuple(grid.boundary.nodes.T)]
    if np.max(np.abs(trace), initial=0.0) > 1e-12 * scale:
        raise BoundaryTraceError("u must vanish on the boundary of the unit cube")
    if not np.any(uc):
        return CarlemanReport(h, gamma_t, 0.0, 0.0, 0.0, 0.0)

    dx = grid.spacing
    n = uc.shape[0]
    x = _cube(grid.coords, grid)
    phi = -np.einsum("i,i...->...", gamma_t, x)
    ew = np.exp(phi / h)
    t = _trap(n)
    w3 = t[:, None, None] * t[None, :, None] * t[None, None, :] * dx ** 3

    op = operator if operator is not None else assemble_operator(W, q, grid)
    Hu = (op.matrix @ uc.reshape(-1)) / dx ** 3
    Hu = Hu.reshape(uc.shape)
    inner = np.zeros(uc.shape, dtype=bool)
    inner[1:-1, 1:-1, 1:-1] = True
    rhs_interior = h ** 2 * float(np.sum(w3[inner] * np.abs(ew[inner] * Hu[inner]) ** 2))

    grad = np.stack(np.gradient(uc, dx, edge_order=2))
    lhs_grad = float(np.sum(w3 * ew ** 2 * h ** 2 * np.sum(np.abs(grad) ** 2, axis=0)))

    w2 = t[:, None] * t[None, :] * dx ** 2
    lhs_minus = rhs_plus = 0.0
    for axis, side in FACES:
        nu = np.zeros(NDIM)
        nu[axis] = 1.0 if side == 1 else -1.0
        dphi = -gamma_t @ nu
        dn = normal_derivative(uc, dx, axis, side)
        e_face = np.moveaxis(ew, axis, 0)[-1 if side == 1 else 0]
        term = h * dphi * float(np.sum(w2 * np.abs(e_face * dn) ** 2))
        if dphi < 0:
            lhs_minus -= term
        else:
            rhs_plus += term
    return CarlemanReport(h, gamma_t, lhs_minus, lhs_grad, rhs_interior, rhs_plus)


def fit_constant(reports):
    """One C for the whole sample set: the largest per-sample requirement, never below zero.

    A negative requirement means the boundary term alone already dominates, so any C >= 0 works.
    """
    C = max(0.0, max(r.required_C for r in reports))
    for r in reports:
        r.fitted_C = C
    return C


# ---------------------------------------------------------------- test functions

def random_bumps(grid, count, seed=0):
    """Smooth complex test functions vanishing on the cube boundary.

    Even entries are compactly supported in the open cube (zero normal
    derivative), odd entries carry the envelope x(1-x)y(1-y)z(1-z) and so
    have nonzero boundary flux.  Parameters do not depend on the grid.
    """
    rng = np.random.default_rng(seed)
    x = grid.coords
    inside = np.all((x >= -1e-12) & (x <= 1 + 1e-12), axis=0)
    env = np.prod(np.clip(x, 0, 1) * np.clip(1 - x, 0, 1), axis=0)
    out = []
    for i in range(count):
        width = rng.uniform(0.2, 0.35)
        gap = width + 0.1
        c = rng.uniform(gap, 1 - gap, size=NDIM) if i % 2 == 0 else rng.uniform(0.3, 0.7, size=NDIM)
        k = rng.uniform(-2, 2, size=NDIM)
        amp = rng.standard_normal() + 1j * rng.standard_normal()
        r2 = np.sum((x - c[:, None, None, None]) ** 2, axis=0)
        phase = np.exp(1j * np.einsum("i,i...->...", k, x))
        if i % 2 == 0:
            rho = np.minimum(r2 / width ** 2, 1.0)
            bump = np.where(rho < 1, np.exp(1.0 - 1.0 / np.maximum(1.0 - rho, 1e-300)), 0.0)
        else:
            bump = 64 * env * np.exp(-r2 / (2 * width ** 2))
        out.append(Field(grid, np.where(inside, amp * bump * phase, 0.0)))
    return out


def audit(grid, W, q, gamma_t, h=0.1, count=50, seed=0):
    """Reports for `count` random bumps with a single fitted constant."""
    W = _values(W)
    q = _values(q)
    op = assemble_operator(W, q, grid)
    reports = [carleman_sides(u, W, q, gamma_t, h, operator=op) for u in random_bumps(grid, count, seed)]
    C = fit_constant(reports)
    return C, reports
