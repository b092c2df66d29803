"""Discrete Dirac operator with Kirchhoff-type vertex conditions.

Mixed Galerkin pairing on every edge: u¹ is continuous piecewise linear
(shared vertex values give continuity of u¹), u² is piecewise constant per
cell. The first-order coupling is assembled after integration by parts, so
the signed sum of u² at each vertex vanishes weakly; at degree-one vertices,
including the far ends of truncated half-lines, this reads u² = 0.

Mass is lumped (trapezoid for u¹, cell width for u²), hence diagonal. With
``G[k, j] = ∫_k φ_j'`` the operator is

    A = [[ mc² W1,  i c Gᵀ ],
         [ -i c G, -mc² W2 ]],     D_h = W⁻¹ A.

Substituting u² = i w turns it into a real symmetric matrix whose square is
block diagonal, so the discrete spectrum lies in (-inf, -mc²] ∪ [mc², inf)
exactly. Internally fields are stored in these real "tilde" coordinates
``ut = (u¹, -i u²)``; public arrays are the genuine complex values
``u = (u¹, u²)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import graph_model as gm
from .errors import (EigenNonConvergence, GridTooCoarse, InvalidParameters,
                     NoHalfLine, NotACycle, SearchMeshTooCoarse)

DENSE_LIMIT = 8000
ZERO_EIG = 1e-12


@dataclass(frozen=True)
class DiracParams:
    m: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if not (self.m > 0 and self.c > 0 and math.isfinite(self.m) and math.isfinite(self.c)):
            raise InvalidParameters(f"need m > 0, c > 0; got m={self.m}, c={self.c}")

    @property
    def mc2(self) -> float:
        return self.m * self.c ** 2


@dataclass(frozen=True)
class Grid:
    """Target spacing and half-line truncation.

    ``overrides`` maps half-line ids to a truncation length other than ``L``.
    """

    h: float = 0.05
    L: Optional[float] = None
    overrides: tuple = ()

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidParameters(f"grid spacing must be > 0, got {self.h}")
        if self.L is not None and not (self.L > 0):
            raise InvalidParameters(f"truncation length must be > 0, got {self.L}")

    def truncation(self, hid: str, params: DiracParams) -> float:
        for k, v in self.overrides:
            if k == hid:
                return float(v)
        return float(self.L) if self.L is not None else 10.0 / (params.m * params.c)


@dataclass(frozen=True)
class EdgeMesh:
    id: str
    halfline: bool
    length: float
    n: int
    nodes: np.ndarray  # global u¹ indices, n + 1 entries, from x = 0
    cells: np.ndarray  # global indices (offset by n1) of the n cells

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n + 1)

    @property
    def x_cells(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h


class Discretization:
    """DOF layout: vertex values, then interior/terminal nodes edge by edge,
    then all cells."""

    def __init__(self, graph: gm.MetricGraph, params: DiracParams, grid: Grid):
        self.graph, self.params, self.grid = graph, params, grid
        vidx = {v: i for i, v in enumerate(graph.vertices)}
        nxt = len(vidx)
        specs = [(e.id, False, e.length, vidx[e.tail], vidx[e.head]) for e in graph.bounded_edges]
        specs += [(hl.id, True, grid.truncation(hl.id, params), vidx[hl.anchor], None)
                  for hl in graph.half_lines]
        raw = []
        for eid, half, length, t, hd in specs:
            n = int(math.ceil(length / grid.h - 1e-9))
            if n < 2:
                raise GridTooCoarse(f"edge {eid!r} of length {length} gets {n} cell(s) at h={grid.h}")
            interior = np.arange(nxt, nxt + n - 1)
            nxt += n - 1
            if half:
                end = nxt
                nxt += 1
            else:
                end = hd
            raw.append((eid, half, length, n, np.concatenate([[t], interior, [end]]).astype(np.int64)))
        self.n1 = nxt
        edges, off = [], self.n1
        for eid, half, length, n, nodes in raw:
            edges.append(EdgeMesh(eid, half, float(length), n, nodes, np.arange(off, off + n)))
            off += n
        self.n2 = off - self.n1
        self.N = off
        self.edges = tuple(edges)
        self.by_id = {e.id: e for e in edges}
        self.vertex_index = vidx

        w = np.zeros(self.N)
        rows, cols, vals = [], [], []
        for e in edges:
            hh = e.h
            np.add.at(w, e.nodes[:-1], 0.5 * hh)
            np.add.at(w, e.nodes[1:], 0.5 * hh)
            w[e.cells] = hh
            k = e.cells - self.n1
            rows += [k, k]
            cols += [e.nodes[:-1], e.nodes[1:]]
            vals += [-np.ones(e.n), np.ones(e.n)]
        self.weights = w
        self.G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(self.n2, self.n1))

    # -- coordinates ---------------------------------------------------------
    def to_tilde(self, u):
        ut = np.array(u, dtype=complex, copy=True)
        ut[self.n1:] *= -1j
        return ut

    def from_tilde(self, ut):
        u = np.array(ut, dtype=complex, copy=True)
        u[self.n1:] *= 1j
        return u

    def inner(self, u, v) -> complex:
        """L² inner product (u, v) = ∫ conj(u)·v."""
        return complex(np.sum(self.weights * np.conj(u) * v))

    def mass(self, u) -> float:
        return float(np.sum(self.weights * np.abs(u) ** 2))

    # -- geometry ------------------------------------------------------------
    def quadrature(self, region: gm.Region):
        """Half-cell quadrature points ``(node, cell, weight)`` on ``region``."""
        node, cell, w = [], [], []
        for e in self.edges:
            if not e.halfline:
                mask = np.ones(e.n, bool)
            elif isinstance(region, gm.CoreUnionSegment) and region.halfline == e.id:
                mask = e.x_cells < region.ell
            else:
                continue
            k = np.nonzero(mask)[0]
            hw = np.full(k.size, 0.5 * e.h)
            node += [e.nodes[k], e.nodes[k + 1]]
            cell += [e.cells[k], e.cells[k]]
            w += [hw, hw]
        if isinstance(region, gm.CoreUnionSegment):
            self.graph.halfline(region.halfline)
        if not node:
            z = np.zeros(0, np.int64)
            return z, z, np.zeros(0)
        return (np.concatenate(node).astype(np.int64), np.concatenate(cell).astype(np.int64),
                np.concatenate(w))

    def edge_values(self, u, eid: str):
        """``(x_nodes, u¹ values, x_cells, u² values)`` on one edge."""
        e = self.by_id[eid]
        u = np.asarray(u)
        return e.x_nodes, u[e.nodes], e.x_cells, u[e.cells]

    def halfline_dofs(self) -> np.ndarray:
        idx = [e.nodes[1:] for e in self.edges if e.halfline] + \
              [e.cells for e in self.edges if e.halfline]
        return np.unique(np.concatenate(idx)) if idx else np.zeros(0, np.int64)


@dataclass
class Spinor:
    """A discrete field together with its layout."""

    disc: Discretization
    values: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def on_edge(self, eid: str):
        return self.disc.edge_values(self.values, eid)

    @property
    def mass(self) -> float:
        return self.disc.mass(self.values)


class AssembledOperator:
    """Discrete Dirac operator with cached spectral decomposition.

    Attributes
    ----------
    A : scipy.sparse.csr_matrix
        Hermitian stiffness matrix in genuine coordinates.
    M : scipy.sparse.dia_matrix
        Diagonal mass matrix.
    Ar : scipy.sparse.csr_matrix
        Real symmetric form ``Qᴴ A Q``, ``Q = diag(1, i)``.
    """

    def __init__(self, graph, params: DiracParams, grid: Grid):
        self.graph, self.params, self.grid = graph, params, grid
        self.disc = d = Discretization(graph, params, grid)
        mc2, c = params.mc2, params.c
        W1 = sp.diags(d.weights[:d.n1])
        W2 = sp.diags(d.weights[d.n1:])
        self.Ar = sp.bmat([[mc2 * W1, -c * d.G.T], [-c * d.G, -mc2 * W2]], format="csr")
        self.A = sp.bmat([[mc2 * W1, 1j * c * d.G.T], [-1j * c * d.G, -mc2 * W2]], format="csr")
        self.M = sp.diags(d.weights)
        self.sqrt_w = np.sqrt(d.weights)

    @property
    def N(self) -> int:
        return self.disc.N

    @property
    def mc2(self) -> float:
        return self.params.mc2

    def scaled_real(self) -> sp.csr_matrix:
        """``W^{-1/2} Ar W^{-1/2}`` (real symmetric, standard eigenproblem)."""
        s = sp.diags(1.0 / self.sqrt_w)
        return (s @ self.Ar @ s).tocsr()

    @cached_property
    def basis(self) -> "SpectralBasis":
        if self.N > DENSE_LIMIT:
            raise EigenNonConvergence(
                f"full spectral basis needs a dense solve; N={self.N} exceeds {DENSE_LIMIT}")
        S = self.scaled_real().toarray()
        lam, V = sla.eigh(S)
        return SpectralBasis(self, lam, V)

    def apply(self, u):
        return apply(self, u)


@dataclass
class SpectralBasis:
    """Orthonormal eigenbasis of the scaled real operator.

    Coefficients ``c = Vᵀ (√w · ut)`` expand a field in M-orthonormal
    eigenvectors ``φ_i = Q W^{-1/2} V[:, i]``.
    """

    op: AssembledOperator
    lam: np.ndarray
    V: np.ndarray
    zero_flags: np.ndarray = field(init=False)

    def __post_init__(self):
        self.zero_flags = np.abs(self.lam) < ZERO_EIG

    @property
    def positive(self) -> np.ndarray:
        # zero modes, if any, go to the positive part and are flagged
        return self.lam >= 0

    def coeffs(self, u) -> np.ndarray:
        ut = self.op.disc.to_tilde(u) * self.op.sqrt_w
        return _matvec(self.V.T, ut)

    def field(self, c) -> np.ndarray:
        return self.op.disc.from_tilde(_matvec(self.V, c) / self.op.sqrt_w)

    def tilde_from_coeffs(self, c):
        return _matvec(self.V, c) / self.op.sqrt_w

    def coeffs_from_tilde(self, ut):
        return _matvec(self.V.T, ut * self.op.sqrt_w)

    def eigvec(self, i: int) -> np.ndarray:
        e = np.zeros(self.lam.size)
        e[i] = 1.0
        return self.field(e)


def _matvec(A, x):
    if np.iscomplexobj(x):
        return A @ x.real + 1j * (A @ x.imag)
    return A @ x


def assemble_dirac(graph: gm.MetricGraph, params: DiracParams, grid: Grid) -> AssembledOperator:
    return AssembledOperator(graph, params, grid)


def apply(op: AssembledOperator, u) -> np.ndarray:
    """Discrete ``D u = M⁻¹ A u``."""
    u = np.asarray(u)
    if u.shape != (op.N,):
        raise InvalidParameters(f"dimension mismatch: expected {op.N}, got {u.shape}")
    return (op.A @ u) / op.disc.weights


def eigen(op: AssembledOperator, count: Optional[int] = None, window=None, sigma: float = 0.0):
    """M-orthonormal eigenpairs sorted by eigenvalue.

    Parameters
    ----------
    count : int, optional
        Keep the ``count`` eigenvalues nearest ``sigma`` (within ``window``).
    window : (lo, hi), optional
        Closed eigenvalue window.
    sigma : float
        Target used for ``count`` selection and for shift-invert mode.

    Returns
    -------
    lam : ndarray
    vecs : ndarray, shape (N, k)
        Eigenvectors in genuine coordinates, columns M-orthonormal.
    """
    if count is not None and count > op.N:
        raise InvalidParameters(f"count {count} exceeds dimension {op.N}")
    if op.N <= DENSE_LIMIT:
        lam, V = op.basis.lam, op.basis.V
    else:
        if count is None:
            raise InvalidParameters("count is required above the dense limit")
        S = op.scaled_real().tocsc()
        try:
            lam, V = spla.eigsh(S, k=min(count * 2 + 10, op.N - 2), sigma=sigma, which="LM",
                                v0=np.ones(op.N), tol=1e-12)
        except spla.ArpackNoConvergence as exc:
            raise EigenNonConvergence(str(exc)) from exc
        o = np.argsort(lam)
        lam, V = lam[o], V[:, o]
    sel = np.ones(lam.size, bool)
    if window is not None:
        sel &= (lam >= window[0]) & (lam <= window[1])
    idx = np.nonzero(sel)[0]
    if count is not None:
        idx = idx[np.argsort(np.abs(lam[idx] - sigma), kind="stable")[:count]]
        idx = np.sort(idx)
    vecs = V[:, idx] / op.sqrt_w[:, None]
    vecs = vecs.astype(complex)
    vecs[op.disc.n1:] *= 1j
    return lam[idx].copy(), vecs


def eigenvalues(op: AssembledOperator, count: Optional[int] = None, sigma: float = 0.0) -> np.ndarray:
    """Eigenvalues only (cheaper than :func:`eigen`)."""
    if op.N <= DENSE_LIMIT:
        if "basis" in op.__dict__:
            lam = op.basis.lam
        else:
            lam = sla.eigvalsh(op.scaled_real().toarray())
        if count is None:
            return lam
        idx = np.sort(np.argsort(np.abs(lam - sigma), kind="stable")[:count])
        return lam[idx]
    if count is None:
        raise InvalidParameters("count is required above the dense limit")
    lam = spla.eigsh(op.scaled_real().tocsc(), k=count, sigma=sigma, which="LM",
                     v0=np.ones(op.N), tol=1e-12, return_eigenvectors=False)
    return np.sort(lam)


@dataclass
class Projectors:
    plus: callable
    minus: callable
    ynorm2: callable
    zero_modes: int


def spectral_projectors(op: AssembledOperator) -> Projectors:
    """P⁺, P⁻ and the form norm ``‖u‖² = Σ|λ_i||c_i|²``."""
    B = op.basis
    pos = B.positive

    def plus(u):
        c = B.coeffs(u)
        return B.field(np.where(pos, c, 0))

    def minus(u):
        c = B.coeffs(u)
        return B.field(np.where(pos, 0, c))

    def ynorm2(u):
        c = B.coeffs(u)
        return float(np.sum(np.abs(B.lam) * np.abs(c) ** 2))

    return Projectors(plus, minus, ynorm2, int(B.zero_flags.sum()))


def dense_projector_matrices(op: AssembledOperator):
    """P± as dense matrices acting on genuine coordinates."""
    B = op.basis
    d = op.disc
    q = np.ones(op.N, complex)
    q[d.n1:] = 1j
    L = q[:, None] * (B.V / op.sqrt_w[:, None])        # u <- c
    R = (B.V * op.sqrt_w[:, None]).T * np.conj(q)[None, :]  # c <- u
    pos = B.positive
    return L[:, pos] @ R[pos], L[:, ~pos] @ R[~pos]


def dirac_norm_sq(op: AssembledOperator, u) -> float:
    """‖D_h u‖₂²."""
    return op.disc.mass(apply(op, u))


def derivative_norm_sq(op: AssembledOperator, u) -> float:
    """Discrete ‖u'‖₂² = u¹ᴴGᵀW2⁻¹Gu¹ + u²ᴴGW1⁻¹Gᵀu².

    Satisfies ‖D_h u‖² = c²‖u'‖² + m²c⁴‖u‖² exactly.
    """
    d = op.disc
    u = np.asarray(u)
    w1, w2 = d.weights[:d.n1], d.weights[d.n1:]
    g1 = d.G @ u[:d.n1]
    g2 = d.G.T @ u[d.n1:]
    return float(np.sum(np.abs(g1) ** 2 / w2) + np.sum(np.abs(g2) ** 2 / w1))


def h1_norm_sq(op: AssembledOperator, u) -> float:
    return op.disc.mass(u) + derivative_norm_sq(op, u)


# -- explicit fields ---------------------------------------------------------

def cycle_eigenfunction(op: AssembledOperator, cycle=None) -> np.ndarray:
    """(0, φ²) with φ² = ±1 along a simple cycle, the sign following the
    traversal direction; eigenvalue -mc²."""
    g = op.graph
    if cycle is None:
        cycle = gm.find_simple_cycle(g)
        if cycle is None:
            raise NotACycle("graph core has no cycle")
    _check_cycle(g, cycle)
    u = np.zeros(op.N, complex)
    for eid, fwd in cycle:
        u[op.disc.by_id[eid].cells] = 1.0 if fwd else -1.0
    return u


def _check_cycle(g, cycle):
    if not cycle:
        raise NotACycle("empty cycle")
    pos = None
    start = None
    for eid, fwd in cycle:
        e = g.edge(eid)
        if not isinstance(e, gm.BoundedEdge):
            raise NotACycle(f"{eid!r} is not a bounded edge")
        a, b = (e.tail, e.head) if fwd else (e.head, e.tail)
        if pos is not None and a != pos:
            raise NotACycle(f"walk breaks at {eid!r}")
        if start is None:
            start = a
        pos = b
    if pos != start:
        raise NotACycle("walk is not closed")


def _bump(y):
    z = 2.0 * y - 3.0
    out = np.zeros_like(y)
    inside = np.abs(z) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside] ** 2))
    return out


def build_phi_b(op: AssembledOperator, b: float, variant: str = "A", halfline=None, ends=None):
    """Test spinors.

    A: (φ¹, 0) with φ¹ = 1 on the core and max(0, 1 - b x) on every half-line.
    B: (φ¹(b x), 0) with a smooth bump φ¹ supported in x ∈ [1/b, 2/b] of one
       half-line.
    C: (0, φ²) with φ² = -max(0, 1 - b x) on the half-line at the first end
       vertex, ±1 along a shortest core path, max(0, 1 - b x) on a half-line
       at the second vertex; signs make the vertex sums vanish.
    """
    if not b > 0:
        raise InvalidParameters(f"b must be > 0, got {b}")
    d, g = op.disc, op.graph
    u = np.zeros(op.N, complex)
    if variant == "A":
        for e in d.edges:
            if e.halfline:
                u[e.nodes] = np.maximum(0.0, 1.0 - b * e.x_nodes)
            else:
                u[e.nodes] = 1.0
        return u
    if variant == "B":
        if not g.half_lines:
            raise NoHalfLine("variant B needs a half-line")
        e = d.by_id[halfline or g.half_lines[0].id]
        vals = _bump(b * e.x_nodes)
        u[e.nodes[1:]] = vals[1:]
        return u
    if variant == "C":
        anchors = []
        for hl in g.half_lines:
            if hl.anchor not in anchors:
                anchors.append(hl.anchor)
        if ends is None:
            if len(anchors) < 2:
                raise NoHalfLine("variant C needs two distinct vertices carrying half-lines")
            ends = (anchors[0], anchors[1])
        v, w = ends
        hv, hw = g.halflines_at(v), g.halflines_at(w)
        if v == w or not hv or not hw:
            raise NoHalfLine("variant C needs two distinct vertices carrying half-lines")
        ev, ew = d.by_id[hv[0]], d.by_id[hw[0]]
        u[ev.cells] = -np.maximum(0.0, 1.0 - b * ev.x_cells)
        u[ew.cells] = np.maximum(0.0, 1.0 - b * ew.x_cells)
        pos = v
        for eid in gm.shortest_path(g, v, w):
            e = g.edge(eid)
            fwd = e.tail == pos
            u[d.by_id[eid].cells] = 1.0 if fwd else -1.0
            pos = e.head if fwd else e.tail
        return u
    raise InvalidParameters(f"unknown variant {variant!r}")


def classify_eigenvalue(op: AssembledOperator, lam: float, vec, tol: float = 1e-6) -> str:
    mc2 = op.mc2
    if op.graph.is_compact:
        return "gap-edge eigenvalue" if abs(abs(lam) - mc2) <= tol else "discrete eigenvalue"
    if abs(abs(lam) - mc2) <= tol:
        tail = op.disc.halfline_dofs()
        frac = np.sum(op.disc.weights[tail] * np.abs(vec[tail]) ** 2) / op.disc.mass(vec)
        if frac < 1e-8:
            return "gap-edge eigenvalue"
    return "essential-spectrum approximant"


# -- transfer-matrix secular oracle -----------------------------------------

def _edge_arms(g: gm.MetricGraph, params: DiracParams, L: Optional[float]):
    """Edge list ``(id, length, tail vertex, head vertex or None)``."""
    arms = [(e.id, e.length, e.tail, e.head) for e in g.bounded_edges]
    for hl in g.half_lines:
        if L is None:
            raise InvalidParameters("graph has half-lines; pass a truncation length L")
        arms.append((hl.id, float(L), hl.anchor, None))
    return arms


def _transfer(lam, length, params):
    """C and S of exp(N x) = C·I + S·N at x = length, vectorised over lam."""
    m2, c = params.mc2, params.c
    k2 = (lam ** 2 - m2 ** 2) / c ** 2
    k = np.sqrt(np.abs(k2))
    kx = k * length
    C = np.where(k2 >= 0, np.cos(kx), np.cosh(kx))
    with np.errstate(invalid="ignore", divide="ignore"):
        Sosc = np.where(kx > 0, np.sin(kx) / np.where(k > 0, k, 1.0), length)
        Shyp = np.where(kx > 0, np.sinh(kx) / np.where(k > 0, k, 1.0), length)
    S = np.where(k2 >= 0, Sosc, Shyp)
    return C, S


def secular_matrix(g: gm.MetricGraph, params: DiracParams, lam, L=None) -> np.ndarray:
    """Real secular matrices, shape (len(lam), 2E, 2E).

    Unknowns per edge are (u¹(0), w(0)) with u² = i w; rows are u¹
    continuity and the signed u² sum at every vertex.
    """
    lam = np.atleast_1d(np.asarray(lam, float))
    arms = _edge_arms(g, params, L)
    E = len(arms)
    m2, c = params.mc2, params.c
    F = np.zeros((lam.size, 2 * E, 2 * E))
    # end values as rows over unknowns: (u1 row, w row) for (edge, end)
    ends = {}
    for j, (eid, length, t, hd) in enumerate(arms):
        C, S = _transfer(lam, length, params)
        u1_0 = np.zeros((lam.size, 2 * E))
        w_0 = np.zeros((lam.size, 2 * E))
        u1_0[:, 2 * j] = 1.0
        w_0[:, 2 * j + 1] = 1.0
        u1_l = np.zeros((lam.size, 2 * E))
        w_l = np.zeros((lam.size, 2 * E))
        u1_l[:, 2 * j] = C
        u1_l[:, 2 * j + 1] = -(lam + m2) / c * S
        w_l[:, 2 * j] = (lam - m2) / c * S
        w_l[:, 2 * j + 1] = C
        ends.setdefault(t, []).append((u1_0, w_0))
        ends.setdefault(hd if hd is not None else ("end", eid), []).append((u1_l, -w_l))
    row = 0
    for v, lst in ends.items():
        first = lst[0][0]
        for u1, _ in lst[1:]:
            F[:, row] = u1 - first
            row += 1
        F[:, row] = sum(wv for _, wv in lst)
        row += 1
    assert row == 2 * E
    return F


def secular_eigenvalues(g: gm.MetricGraph, params: DiracParams, interval, L=None,
                        step: Optional[float] = None, tol: float = 1e-10):
    """Eigenvalues of the continuous operator in ``interval`` (with multiplicity).

    Odd-multiplicity roots come from sign changes of det F(λ) refined by Brent's
    method; even-multiplicity roots from interior minima of σ_min/(1 + σ_max)
    on the mesh refined by bounded minimisation of its square. Multiplicity is the nullity of F.
    """
    from scipy.optimize import brentq, minimize_scalar

    lo, hi = map(float, interval)
    step = step or 1e-3 * params.mc2
    n = max(int(math.ceil((hi - lo) / step)), 2)
    grid = np.linspace(lo, hi, n + 1)
    F = secular_matrix(g, params, grid, L)
    det = np.linalg.det(F)
    sv = np.linalg.svd(F, compute_uv=False)
    rel = sv[:, -1] / (1.0 + sv[:, 0])

    def detf(x):
        return float(np.linalg.det(secular_matrix(g, params, x, L)[0]))

    def relf(x):
        # squared so the minimum is smooth (parabolic) rather than V-shaped
        s = np.linalg.svd(secular_matrix(g, params, x, L)[0], compute_uv=False)
        return (s[-1] / (1.0 + s[0])) ** 2

    def nullity(x):
        s = np.linalg.svd(secular_matrix(g, params, x, L)[0], compute_uv=False)
        return int(np.sum(s < 1e-7 * (1.0 + s[0])))

    roots = []
    sgn = np.sign(det)
    for i in range(n):
        if sgn[i] == 0:
            roots.append(grid[i])
        elif sgn[i] * sgn[i + 1] < 0:
            roots.append(brentq(detf, grid[i], grid[i + 1], xtol=tol, rtol=4 * np.finfo(float).eps))
    if sgn[n] == 0:
        roots.append(grid[n])
    for i in range(1, n):
        if rel[i] < rel[i - 1] and rel[i] <= rel[i + 1] and sgn[i - 1] * sgn[i + 1] > 0 and sgn[i] != 0:
            res = minimize_scalar(relf, bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                                  options={"xatol": 0.01 * tol})
            if res.fun < 1e-14:
                k = nullity(res.x)
                if k % 2 == 1:
                    raise SearchMeshTooCoarse(
                        f"closely spaced roots near {res.x:.6g}; refine the mesh step")
                roots.append(res.x)
    out = []
    for r in sorted(roots):
        if out and abs(r - out[-1][0]) < 10 * tol:
            continue
        out.append((r, max(nullity(r), 1)))
    return [r for r, k in out for _ in range(k)]
