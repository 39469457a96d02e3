"""Grids, fields, discrete differential operators and norms.

All grids live on the embedding box [-L, 1+L]^3 with N cells per axis and
contain the unit cube [0,1]^3 as the physical domain.  Fields are stored
node-wise, scalars with shape (N+1, N+1, N+1) and vectors with a leading
axis of length 3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

NDIM = 3


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid on the box [-L, 1+L]^3."""

    cells: int
    margin: float
    fourier_offset: tuple = (0.0, 0.0, 0.0)

    @property
    def n(self):
        return NDIM

    @property
    def period(self):
        return 1.0 + 2.0 * self.margin

    @property
    def spacing(self):
        return self.period / self.cells

    @property
    def shape(self):
        return (self.cells + 1,) * NDIM

    @property
    def box(self):
        return (-self.margin, 1.0 + self.margin)

    @cached_property
    def axis(self):
        return -self.margin + self.spacing * np.arange(self.cells + 1)

    @cached_property
    def coords(self):
        """Node coordinates, shape (3, N+1, N+1, N+1)."""
        return np.stack(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def domain_index(self):
        """First and last node index of the unit cube along each axis."""
        i0 = int(round(self.margin / self.spacing))
        i1 = int(round((1.0 + self.margin) / self.spacing))
        return i0, i1

    @property
    def diameter(self):
        """sup |x| over the unit cube."""
        return float(np.sqrt(NDIM))

    @cached_property
    def wavenumbers(self):
        """Dual lattice 2π(m + offset)/P per axis, FFT ordering, over N nodes."""
        m = np.fft.fftfreq(self.cells, d=1.0 / self.cells)
        return tuple(2 * np.pi * (m + o) / self.period for o in self.fourier_offset)

    def with_offset(self, offset):
        return GridSpec(self.cells, self.margin, tuple(float(o) for o in offset))

    @cached_property
    def boundary(self):
        return BoundaryMesh(self)

    def to_dict(self):
        return {"cells": self.cells, "margin": self.margin,
                "fourier_offset": list(self.fourier_offset)}


def make_grid(N, L=0.5, fourier_offset=(0.0, 0.0, 0.0)):
    """Build a GridSpec after checking the resolution and margin.

    The unit cube faces have to fall on grid nodes, i.e. L/h must be an
    integer; otherwise boundary traces would be ill defined.
    """
    if int(N) != N or N < 8:
        raise ValueError(f"need at least 8 cells per axis, got {N}")
    if L < 0.5:
        raise ValueError(f"margin L={L} < 0.5: domain not compactly contained")
    offset = tuple(float(o) for o in fourier_offset)
    if len(offset) != NDIM or any(o < 0 or o >= 1 for o in offset):
        raise ValueError("fourier_offset must be a 3-vector in [0,1)^3")
    g = GridSpec(int(N), float(L), offset)
    ratio = L / g.spacing
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"L/h = {ratio} is not an integer; faces of [0,1]^3 miss the nodes")
    return g


@dataclass(frozen=True)
class Field:
    """Complex (or real) node values on a grid; vector fields carry a leading axis of 3."""

    grid: GridSpec
    values: np.ndarray
    support_radius: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape not in (self.grid.shape, (NDIM,) + self.grid.shape):
            raise ValueError(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @property
    def is_vector(self):
        return self.values.ndim == 4

    def __add__(self, other):
        _same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c):
        return Field(self.grid, c * self.values)

    __rmul__ = __mul__


def _same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")


def _check_finite(f):
    if not np.all(np.isfinite(f.values)):
        raise ValueError("field contains NaN or Inf")


# ---------------------------------------------------------------- differences

def _diff_matrix(n, h):
    """Centered first difference, one-sided second order at the two ends."""
    main = sp.diags([-0.5, 0.5], [-1, 1], shape=(n, n), format="lil")
    main[0, :3] = [-1.5, 2.0, -0.5]
    main[n - 1, n - 3:] = [0.5, -2.0, 1.5]
    return (main / h).tocsr()


def _apply_axis(mat, arr, axis):
    moved = np.moveaxis(arr, axis, 0)
    out = mat @ moved.reshape(moved.shape[0], -1)
    return np.moveaxis(out.reshape(moved.shape), 0, axis)


def partial(values, grid, axis):
    """∂/∂x_axis of a node array."""
    return _apply_axis(_diff_matrix(grid.cells + 1, grid.spacing), values, axis)


def discrete_gradient(f):
    if f.is_vector:
        raise ValueError("gradient expects a scalar field")
    return Field(f.grid, np.stack([partial(f.values, f.grid, a) for a in range(NDIM)]))


def discrete_divergence(F):
    if not F.is_vector:
        raise ValueError("divergence expects a vector field")
    return Field(F.grid, sum(partial(F.values[a], F.grid, a) for a in range(NDIM)))


def discrete_laplacian(f):
    """div(grad f); the composition is the definition, so the identity is exact."""
    return discrete_divergence(discrete_gradient(f))


# ---------------------------------------------------------------- box transform

def weight(grid):
    """<x> = (1+|x|^2)^{1/2} at the nodes."""
    return np.sqrt(1.0 + np.sum(grid.coords ** 2, axis=0))


def _bloch_phase(grid):
    x = grid.axis[: grid.cells] - grid.axis[0]
    ph = [np.exp(-2j * np.pi * o * x / grid.period) for o in grid.fourier_offset]
    return ph[0][:, None, None] * ph[1][None, :, None] * ph[2][None, None, :]


def box_fft(values, grid):
    """Transform over the periodic box (first N nodes per axis) on the offset lattice."""
    v = values[..., : grid.cells, : grid.cells, : grid.cells]
    return np.fft.fftn(v * _bloch_phase(grid), axes=(-3, -2, -1))


def box_ifft(coeffs, grid):
    """Inverse of box_fft, returned on all N+1 nodes (last node from periodicity)."""
    v = np.fft.ifftn(coeffs, axes=(-3, -2, -1)) / _bloch_phase(grid)
    # node N is node 0 shifted by one period, i.e. multiplied by the Bloch factor
    bloch = [np.exp(2j * np.pi * o) for o in grid.fourier_offset]
    out = np.empty(v.shape[:-3] + grid.shape, dtype=complex)
    out[..., : grid.cells, : grid.cells, : grid.cells] = v
    out[..., grid.cells, :, :] = bloch[0] * out[..., 0, :, :]
    out[..., :, grid.cells, :] = bloch[1] * out[..., :, 0, :]
    out[..., :, :, grid.cells] = bloch[2] * out[..., :, :, 0]
    return out


def k_squared(grid):
    k1, k2, k3 = grid.wavenumbers
    return k1[:, None, None] ** 2 + k2[None, :, None] ** 2 + k3[None, None, :] ** 2


def hminus1_array(values, spacing, pad=2):
    """H^{-1}(R^3) norm of node values treated as a compactly supported function.

    The array (without the duplicated last node) is zero padded by the factor
    `pad` along every axis before the transform.
    """
    v = np.asarray(values)
    n = v.shape[-1]
    m = pad * n
    coeffs = np.fft.fftn(v, s=(m, m, m), axes=(-3, -2, -1))
    k = 2 * np.pi * np.fft.fftfreq(m, d=spacing)
    ksq = k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2
    total = np.sum(np.abs(coeffs) ** 2 / (1.0 + ksq))
    return float(np.sqrt(total * spacing ** 3 / m ** 3))


def field_norm(f, kind="L2_delta", delta=0.0, t=0.0):
    """Weighted and negative Sobolev norms of a node field.

    kind is one of "L2_delta", "Ht_delta" or "Hminus1_Rn".
    """
    _check_finite(f)
    if kind not in ("L2_delta", "Ht_delta", "Hminus1_Rn"):
        raise ValueError(f"unknown norm kind {kind!r}")
    # every kind is absolutely homogeneous; factoring out the peak keeps tiny or huge fields from under/overflowing
    scale = float(np.max(np.abs(f.values))) if f.values.size else 0.0
    if scale == 0.0:
        return 0.0
    return scale * _unit_norm(f.grid, f.values / scale, kind, delta, t)


def _unit_norm(g, v, kind, delta, t):
    if kind == "L2_delta":
        w = weight(g) ** (2 * delta)
        return float(np.sqrt(np.sum(w * np.abs(v) ** 2) * g.spacing ** 3))
    if kind == "Ht_delta":
        coeffs = box_fft(weight(g) ** delta * v, g)
        mult = (1.0 + k_squared(g)) ** t
        return float(np.sqrt(np.sum(mult * np.abs(coeffs) ** 2) * g.spacing ** 3 / g.cells ** 3))
    edge = [v[..., 0, :, :], v[..., -1, :, :], v[..., :, 0, :], v[..., :, -1, :],
            v[..., :, :, 0], v[..., :, :, -1]]
    if max(np.max(np.abs(e)) for e in edge) > 1e-12:
        raise ValueError("field is not supported inside the box")
    return hminus1_array(v[..., : g.cells, : g.cells, : g.cells], g.spacing)


# ---------------------------------------------------------------- boundary

FACES = ((0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1))  # (axis, side): side 1 is x_axis = 1


class BoundaryMesh:
    """Nodes of the unit-cube surface, their faces, area weights and graph Laplacian."""

    def __init__(self, grid):
        self.grid = grid
        i0, i1 = grid.domain_index
        self.n_side = i1 - i0 + 1
        idx = np.arange(i0, i1 + 1)
        I, J, K = np.meshgrid(idx, idx, idx, indexing="ij")
        on = (I == i0) | (I == i1) | (J == i0) | (J == i1) | (K == i0) | (K == i1)
        self.nodes = np.stack([I[on], J[on], K[on]], axis=1)
        self.size = len(self.nodes)
        lookup = -np.ones(grid.shape, dtype=int)
        lookup[tuple(self.nodes.T)] = np.arange(self.size)
        self._lookup = lookup
        h = grid.spacing
        face_members = []
        for axis, side in FACES:
            fixed = i1 if side else i0
            sel = np.flatnonzero(self.nodes[:, axis] == fixed)
            face_members.append(sel)
        self.face_members = face_members
        self.multiplicity = np.zeros(self.size)
        for sel in face_members:
            self.multiplicity[sel] += 1
        # trapezoidal area weights summed over the faces a node belongs to
        w = np.zeros(self.size)
        for f, (axis, side) in enumerate(FACES):
            sel = face_members[f]
            tang = [a for a in range(NDIM) if a != axis]
            fw = np.ones(len(sel))
            for a in tang:
                edge = (self.nodes[sel, a] == i0) | (self.nodes[sel, a] == i1)
                fw[edge] *= 0.5
            w[sel] += fw * h * h
        self.weights = w
        self.face_id = self._first_face()

    def _first_face(self):
        fid = np.full(self.size, -1)
        for f in range(5, -1, -1):
            fid[self.face_members[f]] = f
        return fid

    def index(self, ijk):
        return self._lookup[tuple(np.asarray(ijk).T)]

    @cached_property
    def edges(self):
        """Pairs of boundary nodes that are grid neighbours on a common face."""
        pairs = set()
        for f, (axis, side) in enumerate(FACES):
            sel = self.face_members[f]
            for a in range(NDIM):
                if a == axis:
                    continue
                nb = self.nodes[sel].copy()
                nb[:, a] += 1
                ok = nb[:, a] <= self.grid.domain_index[1]
                j = self._lookup[tuple(nb[ok].T)]
                for p, q in zip(sel[ok], j):
                    pairs.add((min(p, q), max(p, q)))
        return np.array(sorted(pairs))

    @cached_property
    def stiffness(self):
        """Energy matrix sum over edges of |g_p - g_q|^2 (edge weight h^2 / h^2 = 1)."""
        e = self.edges
        n = self.size
        rows = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
        vals = np.concatenate([np.ones(len(e)), np.ones(len(e)), -np.ones(len(e)), -np.ones(len(e))])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n)).toarray()

    @cached_property
    def spectrum(self):
        """Generalized eigenpairs K v = λ diag(w) v; columns of V are w-orthonormal."""
        lam, V = scipy.linalg.eigh(self.stiffness, np.diag(self.weights))
        return np.clip(lam, 0.0, None), V

    def sobolev_matrix(self, s, members=None):
        """Gram matrix G with (g, g)_s = g^H G g on the (optionally restricted) mesh."""
        if members is None:
            lam, V = self.spectrum
            w = self.weights
        else:
            lam, V, w = self._sub_spectrum(tuple(members))
        Wv = w[:, None] * V
        return (Wv * (1.0 + lam) ** s) @ Wv.T

    def _sub_spectrum(self, members):
        cache = self.__dict__.setdefault("_subcache", {})
        if members not in cache:
            keep = np.zeros(self.size, dtype=bool)
            keep[list(members)] = True
            idx = np.flatnonzero(keep)
            pos = -np.ones(self.size, dtype=int)
            pos[idx] = np.arange(len(idx))
            e = self.edges
            ok = keep[e[:, 0]] & keep[e[:, 1]]
            e = pos[e[ok]]
            n = len(idx)
            K = np.zeros((n, n))
            np.add.at(K, (e[:, 0], e[:, 0]), 1.0)
            np.add.at(K, (e[:, 1], e[:, 1]), 1.0)
            np.add.at(K, (e[:, 0], e[:, 1]), -1.0)
            np.add.at(K, (e[:, 1], e[:, 0]), -1.0)
            # restricted area weights: drop the contribution of removed faces
            w = self._restricted_weights(keep)[idx]
            lam, V = scipy.linalg.eigh(K, np.diag(w))
            cache[members] = (np.clip(lam, 0.0, None), V, w)
        return cache[members]

    def _restricted_weights(self, keep):
        i0, i1 = self.grid.domain_index
        h = self.grid.spacing
        w = np.zeros(self.size)
        for f, (axis, side) in enumerate(FACES):
            sel = self.face_members[f]
            if not np.all(keep[sel]):
                continue
            tang = [a for a in range(NDIM) if a != axis]
            fw = np.ones(len(sel))
            for a in tang:
                edge = (self.nodes[sel, a] == i0) | (self.nodes[sel, a] == i1)
                fw[edge] *= 0.5
            w[sel] += fw * h * h
        return w


@dataclass(frozen=True)
class BoundaryTrace:
    """Values on the nodes of the unit-cube surface (ordering of BoundaryMesh.nodes)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (self.grid.boundary.size,):
            raise ValueError("trace length does not match the boundary node count")
        object.__setattr__(self, "values", v)

    @property
    def face_id(self):
        return self.grid.boundary.face_id

    @classmethod
    def from_field(cls, f):
        mesh = f.grid.boundary
        return cls(f.grid, f.values[tuple(mesh.nodes.T)])


def boundary_norm(g, s):
    """((I + L)^s g, g)^{1/2} with L the area-weighted boundary graph Laplacian."""
    if s not in (-0.5, 0.5, 1.5):
        raise ValueError(f"unsupported boundary Sobolev order {s}")
    G = g.grid.boundary.sobolev_matrix(s)
    v = g.values
    return float(np.sqrt(max(np.real(np.conj(v) @ G @ v), 0.0)))


# ---------------------------------------------------------------- snapshots

def save_snapshot(path, f, kind="scalar"):
    """Write little-endian complex64 values plus a JSON sidecar."""
    path = Path(path)
    data = np.asarray(f.values, dtype="<c8")
    path.with_suffix(".bin").write_bytes(data.tobytes(order="C"))
    meta = {"dims": list(data.shape), "spacing": f.grid.spacing,
            "box": list(f.grid.box), "kind": kind, "grid": f.grid.to_dict()}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_snapshot(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    g = meta["grid"]
    grid = make_grid(g["cells"], g["margin"], g["fourier_offset"])
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<c8")
    return Field(grid, raw.reshape(meta["dims"]).astype(complex)), meta
