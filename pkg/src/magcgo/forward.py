"""Discrete magnetic Schrödinger operator on the unit cube and its DN maps.

The operator comes from the Hermitian form

    Q(v, u) = sum_edges c_e h (e^{-iθ_e} u_b - u_a) conj(e^{-iθ_e} v_b - v_a)
              + sum_nodes c_n h^3 q u conj(v),

θ_e = h W·e on the edge from a to b (trapezoidal average of W), with c_e, c_n
the fraction of the dual cell inside the cube.  Interior rows divided by h^3
give (D + W)^2 + q with D = -i∇, i.e. -Δ - 2iW·∇ - i div W + W² + q to
second order.  Boundary rows give the magnetic co-normal flux
(∂_ν + iW·ν)u times the boundary area weights (Green's identity), so the DN
map is the Schur complement of the form onto the boundary nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FACES, NDIM, BoundaryTrace, Field, make_grid

SPECTRAL_GUARD = 1e-6
SOLVE_TOL = 1e-10
TOP_FACE = 5


class SpectralGuardError(RuntimeError):
    """0 is numerically an eigenvalue of the interior Dirichlet operator."""


def _values(obj):
    for name in ("W", "q"):
        inner = getattr(obj, name, None)
        if isinstance(inner, Field):
            return inner.values
    if isinstance(obj, Field):
        return obj.values
    return np.asarray(obj)


@dataclass
class DiscreteOperator:
    """Hermitian matrix of the form over the nodes of the closed cube."""

    grid: object
    matrix: sp.csr_matrix
    interior: np.ndarray  # positions (in cube-node order) of interior nodes
    boundary: np.ndarray  # positions of boundary nodes, in BoundaryMesh order
    node_weights: np.ndarray
    _lu: object = field(default=None, repr=False)
    _guard: float = field(default=None, repr=False)

    @property
    def n_side(self):
        return self.grid.boundary.n_side

    @property
    def A_ii(self):
        return self.matrix[self.interior][:, self.interior]

    @property
    def A_ib(self):
        return self.matrix[self.interior][:, self.boundary]

    @property
    def A_bi(self):
        return self.matrix[self.boundary][:, self.interior]

    @property
    def A_bb(self):
        return self.matrix[self.boundary][:, self.boundary]

    @property
    def hamiltonian(self):
        """H restricted to interior nodes with zero Dirichlet data (= A_ii / h^3)."""
        return (self.A_ii / self.grid.spacing ** 3).tocsr()

    def factor(self):
        if self._lu is None:
            self._lu = spla.splu(self.A_ii.tocsc().astype(complex))
        return self._lu

    def smallest_eigenvalue(self):
        """Estimate of min |λ(A_ii)| by Lanczos on the inverse."""
        if self._guard is None:
            lu = self.factor()
            n = len(self.interior)
            inv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=complex)
            v0 = np.ones(n, dtype=complex)
            mu = spla.eigsh(inv, k=1, which="LM", v0=v0, tol=1e-6, return_eigenvectors=False)
            self._guard = 1.0 / abs(mu[0])
        return self._guard

    def check_spectrum(self):
        scale = spla.norm(self.A_ii, 1)
        lam = self.smallest_eigenvalue()
        if lam < SPECTRAL_GUARD * scale:
            raise SpectralGuardError(f"smallest |eigenvalue| {lam:.3e} below {SPECTRAL_GUARD:g}·‖A‖ = "
                                     f"{SPECTRAL_GUARD * scale:.3e}")
        return lam

    def to_cube(self, u_cube):
        """Cube-node vector to a full-grid array (zero outside the cube)."""
        g = self.grid
        i0, i1 = g.domain_index
        out = np.zeros(g.shape, dtype=complex)
        out[i0:i1 + 1, i0:i1 + 1, i0:i1 + 1] = u_cube.reshape((self.n_side,) * NDIM)
        return out

    def from_grid(self, values):
        i0, i1 = self.grid.domain_index
        return np.asarray(values)[i0:i1 + 1, i0:i1 + 1, i0:i1 + 1].reshape(-1)

    def form(self, v_cube, u_cube):
        """Q(v, u) = v^H A u."""
        return complex(np.vdot(v_cube, self.matrix @ u_cube))


def _trap(n):
    c = np.ones(n)
    c[0] = c[-1] = 0.5
    return c


def assemble_operator(W, q, grid):
    """Hermitian discretization of (D + W)^2 + q on the nodes of the unit cube."""
    Wv = np.real(_values(W))
    qv = np.real(_values(q))
    if Wv.shape != (NDIM,) + grid.shape or qv.shape != grid.shape:
        raise ValueError("potentials do not live on this grid")
    h = grid.spacing
    i0, i1 = grid.domain_index
    n = i1 - i0 + 1
    sl = slice(i0, i1 + 1)
    Wc = Wv[:, sl, sl, sl]
    qc = qv[sl, sl, sl]
    ids = np.arange(n ** 3).reshape(n, n, n)
    t = _trap(n)
    cw = [t[:, None, None], t[None, :, None], t[None, None, :]]

    rows, cols, vals = [], [], []
    diag = np.zeros((n, n, n), dtype=complex)
    for a in range(NDIM):
        lo = [slice(None)] * NDIM
        hi = [slice(None)] * NDIM
        lo[a] = slice(0, n - 1)
        hi[a] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        ce = np.ones((n, n, n))
        for b in range(NDIM):
            if b != a:
                ce = ce * cw[b]
        ce = np.broadcast_to(ce, (n, n, n))[lo]
        theta = 0.5 * h * (Wc[a][lo] + Wc[a][hi])
        off = -ce * h * np.exp(1j * theta)
        diag[lo] += ce * h
        diag[hi] += ce * h
        rows += [ids[lo].ravel(), ids[hi].ravel()]
        cols += [ids[hi].ravel(), ids[lo].ravel()]
        vals += [off.ravel(), np.conj(off).ravel()]
    cn = cw[0] * cw[1] * cw[2] * np.ones((n, n, n))
    diag += cn * h ** 3 * qc
    rows.append(ids.ravel())
    cols.append(ids.ravel())
    vals.append(diag.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n ** 3, n ** 3))
    A.sum_duplicates()

    mesh = grid.boundary
    local = mesh.nodes - i0
    bpos = np.ravel_multi_index(local.T, (n, n, n))
    is_b = np.zeros(n ** 3, dtype=bool)
    is_b[bpos] = True
    return DiscreteOperator(grid, A, np.flatnonzero(~is_b), bpos, (cn * h ** 3).ravel())


def _trace_values(op, f):
    if isinstance(f, BoundaryTrace):
        return f.values
    return np.asarray(f)


def dirichlet_solve(op, f, guard=True):
    """Solve H u = 0 in the cube with u = f on the boundary nodes."""
    if guard:
        op.check_spectrum()
    fb = _trace_values(op, f).astype(complex)
    rhs = -(op.A_ib @ fb)
    ui = op.factor().solve(rhs)
    res = op.A_ii @ ui - rhs
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if np.linalg.norm(res) > SOLVE_TOL * scale and np.linalg.norm(rhs) > 0:
        raise RuntimeError("Dirichlet solve did not reach the residual tolerance")
    u = np.zeros(op.n_side ** 3, dtype=complex)
    u[op.interior] = ui
    u[op.boundary] = fb
    return Field(op.grid, op.to_cube(u))


# ---------------------------------------------------------------- boundary basis

def boundary_basis(grid, m_max=4):
    """Per-face products cos(aπu)cos(bπv), a, b ≤ m_max, shared nodes split evenly.

    Returns the (boundary nodes x 6(m_max+1)^2) matrix and the (face, a, b) labels.
    """
    mesh = grid.boundary
    i0, _ = grid.domain_index
    span = mesh.n_side - 1
    cols, labels = [], []
    for f, (axis, side) in enumerate(FACES):
        sel = mesh.face_members[f]
        tang = [a for a in range(NDIM) if a != axis]
        u = (mesh.nodes[sel, tang[0]] - i0) / span
        v = (mesh.nodes[sel, tang[1]] - i0) / span
        for a in range(m_max + 1):
            for b in range(m_max + 1):
                col = np.zeros(mesh.size)
                col[sel] = np.cos(a * np.pi * u) * np.cos(b * np.pi * v) / mesh.multiplicity[sel]
                cols.append(col)
                labels.append((f, a, b))
    return np.stack(cols, axis=1), labels


@dataclass
class DNMap:
    """Λ on the span of the boundary basis.

    matrix[i, j] = ∫ basis_i (∂_ν + iW·ν)u_j over the boundary; `flux` holds
    the weighted co-normal data A_bb f - A_bi u_i (area weight times Λf) at
    every boundary node for each basis column.
    """

    grid: object
    m_max: int
    basis: np.ndarray
    labels: list
    flux: np.ndarray
    matrix: np.ndarray

    @property
    def neumann(self):
        """Λ basis_j as nodal values."""
        return self.flux / self.grid.boundary.weights[:, None]

    def apply(self, coeffs):
        return self.neumann @ np.asarray(coeffs)

    def __sub__(self, other):
        _check_compatible(self, other)
        return DNMap(self.grid, self.m_max, self.basis, self.labels,
                     self.flux - other.flux, self.matrix - other.matrix)

    def __mul__(self, c):
        return DNMap(self.grid, self.m_max, self.basis, self.labels, c * self.flux, c * self.matrix)

    __rmul__ = __mul__


@dataclass
class PartialDNMap:
    """Λ with range restricted to the faces whose normal satisfies ν·e_3 ≤ 2ε0."""

    parent: DNMap
    eps0: float
    faces: tuple
    rows: np.ndarray  # basis rows kept
    nodes: np.ndarray  # boundary nodes kept (members of a kept face)
    matrix: np.ndarray
    flux: np.ndarray

    @property
    def grid(self):
        return self.parent.grid

    def __sub__(self, other):
        if not isinstance(other, PartialDNMap) or other.faces != self.faces:
            raise ValueError("partial maps restricted to different faces")
        diff = self.parent - other.parent
        return restrict_partial(diff, self.eps0)

    def __mul__(self, c):
        return restrict_partial(c * self.parent, self.eps0)

    __rmul__ = __mul__


def _check_compatible(a, b):
    if a.grid != b.grid or a.m_max != b.m_max:
        raise ValueError("DN maps use different bases or grids")


def dn_map(W, q, grid, m_max=4, op=None):
    """One Dirichlet solve per basis trace against a single factorization."""
    if op is None:
        op = assemble_operator(W, q, grid)
    op.check_spectrum()
    B, labels = boundary_basis(grid, m_max)
    rhs = -(op.A_ib @ B.astype(complex))
    ui = op.factor().solve(np.ascontiguousarray(rhs))
    res = op.A_ii @ ui - rhs
    if np.linalg.norm(res) > SOLVE_TOL * max(np.linalg.norm(rhs), 1.0):
        raise RuntimeError("Dirichlet solves did not reach the residual tolerance")
    flux = op.A_bb @ B + op.A_bi @ ui
    flux = np.asarray(flux)
    return DNMap(grid, m_max, B, labels, flux, B.T @ flux)


def restrict_partial(dn, eps0):
    if not 0 < eps0 < 0.4:
        raise ValueError("ε0 must lie in (0, 0.4)")
    normals = []
    for axis, side in FACES:
        nu = np.zeros(NDIM)
        nu[axis] = 1.0 if side else -1.0
        normals.append(nu)
    faces = tuple(f for f in range(len(FACES)) if normals[f][2] <= 2 * eps0)
    mesh = dn.grid.boundary
    rows = np.array([i for i, lab in enumerate(dn.labels) if lab[0] in faces])
    nodes = np.unique(np.concatenate([mesh.face_members[f] for f in faces]))
    return PartialDNMap(dn, eps0, faces, rows, nodes, dn.matrix[rows], dn.flux[nodes])


# ---------------------------------------------------------------- norms

def _domain_factor(dn, s):
    mesh = dn.grid.boundary
    G = dn.basis.T @ mesh.sobolev_matrix(s) @ dn.basis
    return np.linalg.cholesky(0.5 * (G + G.T))


def dn_operator_norm(diff, orders=None):
    """Largest singular value of Λ_Δ between boundary Sobolev spaces.

    Full maps: H^{1/2} → H^{-1/2}; partial maps: H^{3/2} → H^{1/2} of the
    kept faces.  `orders = (range_s, domain_s)` overrides the defaults.
    """
    mesh = diff.grid.boundary
    if isinstance(diff, PartialDNMap):
        rs, ds = orders or (0.5, 1.5)
        lam, V, w = mesh._sub_spectrum(tuple(diff.nodes))
        coeff = V.T @ diff.flux  # V^T diag(w) (flux / w)
        parent = diff.parent
    elif isinstance(diff, DNMap):
        rs, ds = orders or (-0.5, 0.5)
        lam, V = mesh.spectrum
        coeff = V.T @ diff.flux
        parent = diff
    else:
        raise TypeError("expected a DNMap or PartialDNMap")
    if not np.any(diff.flux):
        return 0.0
    N = (1.0 + lam)[:, None] ** (rs / 2) * coeff
    L = _domain_factor(parent, ds)
    M = scipy.linalg.solve_triangular(L, N.T, lower=True).T  # N L^{-T}
    return float(np.linalg.norm(M, 2))


# ---------------------------------------------------------------- serialization

def save_dn_map(path, dn):
    path = Path(path)
    eps0 = None
    if isinstance(dn, PartialDNMap):
        eps0 = dn.eps0
        dn = dn.parent
    meta = {"m_max": dn.m_max, "grid": dn.grid.to_dict(), "eps0": eps0,
            "matrix_dims": list(dn.matrix.shape), "flux_dims": list(dn.flux.shape)}
    blob = np.concatenate([dn.matrix.ravel(), dn.flux.ravel()]).astype("<c8")
    path.with_suffix(".bin").write_bytes(blob.tobytes())
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_dn_map(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    g = meta["grid"]
    grid = make_grid(g["cells"], g["margin"], g["fourier_offset"])
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<c8").astype(complex)
    nm = int(np.prod(meta["matrix_dims"]))
    matrix = raw[:nm].reshape(meta["matrix_dims"])
    flux = raw[nm:].reshape(meta["flux_dims"])
    B, labels = boundary_basis(grid, meta["m_max"])
    dn = DNMap(grid, meta["m_max"], B, labels, flux, matrix)
    if meta["eps0"] is not None:
        return restrict_partial(dn, meta["eps0"])
    return dn
