"""Reference elements: 1D node families, element node layouts and Lagrange bases.

Quads live on [-1, 1]^2 with counterclockwise vertices
(-1,-1), (1,-1), (1,1), (-1,1).  Triangles live on the unit right triangle
(0,0), (1,0), (0,1).  Every node list is ordered vertices first, then the
interior nodes of each edge (walking from the edge's first vertex to its
second), then element-interior nodes.  Edge ``k`` joins local vertices
``k`` and ``(k + 1) % nv``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

QUAD = "quad"
TRI = "tri"

GL = "gl"
EQUI = "equi"

# Degree-2 symmetric triangle rule (Strang-Fix) points; used as the p=4
# interior node set since degree 2 is the best a 3-point interior rule reaches.
_TRI_P4_INTERIOR = np.array(
    [[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]
)


def gauss_lobatto_1d(p: int) -> np.ndarray:
    """Gauss-Lobatto nodes on [-1, 1]: the endpoints and the roots of P'_p."""
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    if p == 1:
        return np.array([-1.0, 1.0])
    dp = legendre.Legendre.basis(p).deriv()
    ddp = dp.deriv()
    inner = np.sort(dp.roots().real)
    for _ in range(3):
        inner = inner - dp(inner) / ddp(inner)
    x = np.concatenate([[-1.0], inner, [1.0]])
    # enforce exact symmetry
    x = 0.5 * (x - x[::-1])
    if p % 2 == 0:
        x[p // 2] = 0.0
    return x


def gauss_lobatto_weights(p: int) -> np.ndarray:
    x = gauss_lobatto_1d(p)
    pp = legendre.Legendre.basis(p)(x)
    return 2.0 / (p * (p + 1) * pp**2)


def equispaced_1d(p: int) -> np.ndarray:
    if p < 1:
        raise ValueError(f"degree must be >= 1, got {p}")
    return np.linspace(-1.0, 1.0, p + 1)


def nodes_1d(p: int, family: str = GL) -> np.ndarray:
    if family == GL:
        return gauss_lobatto_1d(p)
    if family == EQUI:
        return equispaced_1d(p)
    raise ValueError(f"unknown node family {family!r}")


def _quad_nodes(p: int, family: str) -> np.ndarray:
    x = nodes_1d(p, family)
    verts = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    pts = [verts]
    inner = x[1:-1]
    for k in range(4):
        a, b = verts[k], verts[(k + 1) % 4]
        s = 0.5 * (inner + 1.0)
        pts.append(a + s[:, None] * (b - a))
    if p >= 2:
        xx, yy = np.meshgrid(inner, inner, indexing="xy")
        pts.append(np.column_stack([xx.ravel(), yy.ravel()]))
    return np.vstack(pts)


def _tri_interior(p: int, family: str) -> np.ndarray:
    if p < 3:
        return np.zeros((0, 2))
    if family == GL and p == 3:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    if family == GL and p == 4:
        return _TRI_P4_INTERIOR.copy()
    # equispaced interior lattice: unisolvent for degree p - 3
    pts = [
        (i / p, j / p)
        for j in range(1, p)
        for i in range(1, p)
        if i + j < p
    ]
    return np.array(pts, dtype=float)


def _tri_nodes(p: int, family: str) -> np.ndarray:
    x = nodes_1d(p, family)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    pts = [verts]
    s = 0.5 * (x[1:-1] + 1.0)
    for k in range(3):
        a, b = verts[k], verts[(k + 1) % 3]
        pts.append(a + s[:, None] * (b - a))
    pts.append(_tri_interior(p, family))
    return np.vstack(pts)


def _exponents(shape: str, p: int) -> np.ndarray:
    if shape == QUAD:
        return np.array([(i, j) for j in range(p + 1) for i in range(p + 1)])
    return np.array([(i, j) for j in range(p + 1) for i in range(p + 1 - j)])


def _centered(shape: str, xi: np.ndarray) -> np.ndarray:
    # keep monomial arguments O(1) and centred for a well-conditioned Vandermonde
    if shape == QUAD:
        return xi
    return 3.0 * (xi - 1.0 / 3.0)


def _monomials(shape, exps, xi):
    z = _centered(shape, np.atleast_2d(xi))
    scale = 1.0 if shape == QUAD else 3.0
    x, y = z[:, 0:1], z[:, 1:2]
    i, j = exps[:, 0], exps[:, 1]
    val = x**i * y**j
    dx = np.where(i > 0, i * x ** np.maximum(i - 1, 0), 0.0) * y**j * scale
    dy = x**i * np.where(j > 0, j * y ** np.maximum(j - 1, 0), 0.0) * scale
    return val, dx, dy


@dataclass(frozen=True)
class ReferenceElement:
    """Nodal Lagrange element of a given shape, degree and node family."""

    shape: str
    degree: int
    family: str = GL
    nodes: np.ndarray = field(init=False, repr=False)
    _coef: np.ndarray = field(init=False, repr=False)
    _exps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.shape == QUAD:
            nodes = _quad_nodes(self.degree, self.family)
        elif self.shape == TRI:
            nodes = _tri_nodes(self.degree, self.family)
        else:
            raise ValueError(f"unknown shape {self.shape!r}")
        exps = _exponents(self.shape, self.degree)
        vand, _, _ = _monomials(self.shape, exps, nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_exps", exps)
        object.__setattr__(self, "_coef", np.linalg.inv(vand))

    @property
    def nv(self) -> int:
        return 4 if self.shape == QUAD else 3

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edge_interior(self) -> int:
        return self.degree - 1

    def edge_node_ids(self, k: int) -> np.ndarray:
        """Local ids along edge k, from vertex k to vertex k+1 inclusive."""
        m = self.degree - 1
        start = self.nv + k * m
        inner = np.arange(start, start + m)
        return np.concatenate([[k], inner, [(k + 1) % self.nv]])

    def interior_node_ids(self) -> np.ndarray:
        return np.arange(self.nv + self.nv * (self.degree - 1), self.n_nodes)

    def eval(self, xi: np.ndarray):
        """Basis values and reference gradients at points ``xi`` (m, 2).

        Returns ``(phi, dphi)`` with shapes (m, n) and (m, n, 2).
        """
        val, dx, dy = _monomials(self.shape, self._exps, np.asarray(xi, float))
        phi = val @ self._coef
        dphi = np.stack([dx @ self._coef, dy @ self._coef], axis=-1)
        return phi, dphi

    def edge_point(self, k: int, s: np.ndarray) -> np.ndarray:
        """Reference coordinates at fraction s in [0, 1] along edge k."""
        verts = self.nodes[: self.nv]
        a, b = verts[k], verts[(k + 1) % self.nv]
        s = np.asarray(s, float)
        return a + s[..., None] * (b - a)


@lru_cache(maxsize=None)
def reference_element(shape: str, degree: int, family: str = GL) -> ReferenceElement:
    return ReferenceElement(shape, degree, family)


def shape_eval(ref: ReferenceElement, xi):
    return ref.eval(xi)


def subtriangles(ref: ReferenceElement) -> np.ndarray:
    """Split the element into linear triangles through its nodes.

    Uses the lattice pattern of the degree-p reference element; gives
    p^2 triangles for a triangle and 2 p^2 for a quad (each lattice cell
    cut along a diagonal, caller may re-choose the diagonal).
    """
    p = ref.degree
    idx = _lattice_index(ref)
    tris = []
    if ref.shape == TRI:
        for j in range(p):
            for i in range(p - j):
                a, b, c = idx[(i, j)], idx[(i + 1, j)], idx[(i, j + 1)]
                tris.append((a, b, c))
                if i + j < p - 1:
                    d = idx[(i + 1, j + 1)]
                    tris.append((b, d, c))
    else:
        for j in range(p):
            for i in range(p):
                a, b = idx[(i, j)], idx[(i + 1, j)]
                c, d = idx[(i + 1, j + 1)], idx[(i, j + 1)]
                tris.append((a, b, c))
                tris.append((a, c, d))
    return np.array(tris, dtype=np.int64)


def lattice_cells(ref: ReferenceElement) -> np.ndarray:
    """Quad lattice cells (p^2, 4) of a quad element, counterclockwise."""
    if ref.shape != QUAD:
        raise ValueError("lattice cells only exist for quads")
    p = ref.degree
    idx = _lattice_index(ref)
    cells = [
        (idx[(i, j)], idx[(i + 1, j)], idx[(i + 1, j + 1)], idx[(i, j + 1)])
        for j in range(p)
        for i in range(p)
    ]
    return np.array(cells, dtype=np.int64)


@lru_cache(maxsize=None)
def _lattice_index_cached(shape, degree, family):
    ref = reference_element(shape, degree, family)
    p = degree
    out = {}
    if shape == QUAD:
        x = nodes_1d(p, family)
        lookup = {tuple(np.round(n, 12)): k for k, n in enumerate(ref.nodes)}
        for j in range(p + 1):
            for i in range(p + 1):
                out[(i, j)] = lookup[(round(x[i], 12), round(x[j], 12))]
        return out
    # triangle: map lattice (i, j) to nodes by topology, since interior nodes
    # need not sit on the lattice.
    m = p - 1
    nv = 3
    out[(0, 0)], out[(p, 0)], out[(0, p)] = 0, 1, 2
    for s in range(1, p):
        out[(s, 0)] = nv + 0 * m + (s - 1)
        out[(p - s, s)] = nv + 1 * m + (s - 1)
        out[(0, p - s)] = nv + 2 * m + (s - 1)
    interior = [(i, j) for j in range(1, p) for i in range(1, p) if i + j < p]
    first = nv + 3 * m
    if p == 4 and family == GL:
        # interior nodes (1/6,1/6), (2/3,1/6), (1/6,2/3) ~ lattice (1,1), (2,1), (1,2)
        order = [(1, 1), (2, 1), (1, 2)]
        for k, ij in enumerate(order):
            out[ij] = first + k
    else:
        for k, ij in enumerate(interior):
            out[ij] = first + k
    return out


def _lattice_index(ref: ReferenceElement):
    return _lattice_index_cached(ref.shape, ref.degree, ref.family)
