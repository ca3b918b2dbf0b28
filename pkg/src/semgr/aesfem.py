"""Near-boundary post-processing with the adaptive extended stencil FEM.

A linear triangle submesh is cut out of the high-order mesh around the
curved boundaries.  Each free node gets a generalized Lagrange polynomial
(GLP) basis from a weighted least-squares fit over an extended stencil; the
equation of node i tests the PDE against the linear hat function of i with
the trial function given by node i's local fit.  Nodes on the artificial
boundary keep their SEM values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DIRICHLET, NEUMANN, TWO_PI, Domain
from .highorder import HighOrderMesh
from .meshgen.mesh import build_ahf
from .quadrature import line_rule, quadrature_rule
from .reference import QUAD, TRI, lattice_cells, reference_element, subtriangles
from .sem import BCSpec, PDECoefficients, SolveError

COND_MAX = 1e8
STENCIL_FACTOR = 1.5


class SubmeshError(RuntimeError):
    pass


class StencilError(RuntimeError):
    pass


@dataclass
class BoundarySubmesh:
    """Linear triangles over parent solution nodes.

    ``parent[i]`` is the parent node of local node i.  ``artificial`` marks
    nodes on the cut through the mesh; ``hole`` is the hole id of nodes on
    a curve (-1 elsewhere); ``dirichlet`` marks nodes with prescribed data.
    """

    points: np.ndarray
    tris: np.ndarray
    parent: np.ndarray
    artificial: np.ndarray
    hole: np.ndarray
    dirichlet: np.ndarray
    quads_used: np.ndarray
    layers: int
    t: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def fixed(self) -> np.ndarray:
        return self.artificial | self.dirichlet

    def neighbours(self) -> list[set]:
        nb = [set() for _ in range(self.n_nodes)]
        for a, b, c in self.tris:
            nb[a].update((b, c))
            nb[b].update((a, c))
            nb[c].update((a, b))
        return nb

    def boundary_edges(self):
        sib = build_ahf(np.hstack([self.tris, np.full((len(self.tris), 1), -1)]))
        out = []
        for e in range(len(self.tris)):
            for k in range(3):
                if sib[e, k] < 0:
                    out.append((e, k, int(self.tris[e, k]), int(self.tris[e, (k + 1) % 3])))
        return out


@dataclass
class GLPBasis:
    node: int
    stencil: np.ndarray
    degree: int
    center: np.ndarray
    radius: float
    coef: np.ndarray
    cond: float
    exps: np.ndarray = field(repr=False)

    def monomials(self, x, derivs: bool = True):
        z = (np.atleast_2d(x) - self.center) / self.radius
        val, dx, dy = _monomial_grads(z, self.exps, self.radius)
        return (val, dx, dy) if derivs else val

    def fit(self, values):
        """Monomial coefficients of the local fit to stencil ``values``."""
        return self.coef @ np.asarray(values, float)

    def evaluate(self, values, x):
        """Fitted value and gradient at points ``x``."""
        a = self.fit(values)
        val, dx, dy = self.monomials(x)
        return val @ a, np.column_stack([dx @ a, dy @ a])


def split_quad_to_tris(pts: np.ndarray, quad) -> np.ndarray:
    """Split a ccw quad along its shorter diagonal into two ccw triangles."""
    a, b, c, d = quad
    d1 = np.linalg.norm(pts[c] - pts[a])
    d2 = np.linalg.norm(pts[d] - pts[b])
    tris = np.array([[a, b, c], [a, c, d]]) if d1 <= d2 else np.array([[a, b, d], [b, c, d]])
    area = _areas(pts, tris)
    if np.any(area <= 0.0):
        # the other diagonal may still work on a non-convex cell
        alt = np.array([[a, b, d], [b, c, d]]) if d1 <= d2 else np.array([[a, b, c], [a, c, d]])
        if np.all(_areas(pts, alt) > 0.0):
            return alt
        raise SubmeshError(f"degenerate quad {list(map(int, quad))}")
    return tris


def _areas(pts, tris):
    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    )


def extract_boundary_submesh(mesh: HighOrderMesh, domain: Domain, layers: int = 2) -> BoundarySubmesh:
    if layers < 1:
        raise ValueError("layers must be >= 1")
    lin = mesh.linear
    if len(lin.tris) == 0:
        raise SubmeshError("mesh has no near-boundary triangles")
    ref_t = reference_element(TRI, mesh.p, mesh.family)
    ref_q = reference_element(QUAD, mesh.p, mesh.family)
    sub_t = subtriangles(ref_t)
    cells = lattice_cells(ref_q)

    in_mesh = np.zeros(lin.n_nodes, dtype=bool)
    in_mesh[np.unique(lin.tris)] = True
    used = np.zeros(lin.n_quads, dtype=bool)
    for _ in range(layers):
        hits = in_mesh[lin.quads].sum(axis=1)
        new = (~used) & (hits >= 2)
        if not new.any():
            break
        used |= new
        in_mesh[np.unique(lin.quads[new])] = True

    tris = [mesh.tri_conn[t][sub_t] for t in range(len(mesh.tri_conn))]
    for e in np.nonzero(used)[0]:
        conn = mesh.quad_conn[e]
        for cell in cells:
            tris.append(split_quad_to_tris(mesh.nodes, conn[cell]))
    gtris = np.vstack(tris)
    parent = np.unique(gtris)
    local = {int(g): i for i, g in enumerate(parent)}
    ltris = np.vectorize(local.__getitem__)(gtris)
    pts = mesh.nodes[parent]
    area = _areas(pts, ltris)
    if np.any(area <= 0.0):
        k = int(np.argmin(area))
        n_tri_sub = len(mesh.tri_conn) * len(sub_t)
        owner = (
            f"triangle {lin.n_quads + k // len(sub_t)}"
            if k < n_tri_sub
            else f"quad {int(np.nonzero(used)[0][(k - n_tri_sub) // (2 * len(cells))])}"
        )
        raise SubmeshError(
            f"inverted sub-triangle in boundary submesh ({owner}, area {area[k]:.3e})"
        )

    hole = mesh.node_hole[parent].copy()
    outer = mesh.node_outer[parent]
    dirichlet = outer.copy()
    for hid, h in enumerate(domain.holes):
        if h.bc == DIRICHLET:
            dirichlet |= hole == hid
    sub = BoundarySubmesh(
        pts, ltris, parent, np.zeros(len(parent), bool), hole, dirichlet, np.nonzero(used)[0], layers,
        mesh.node_t[parent].copy(),
    )
    art = np.zeros(len(parent), dtype=bool)
    for _, _, a, b in sub.boundary_edges():
        on_curve = hole[a] >= 0 and hole[a] == hole[b]
        on_outer = outer[a] and outer[b]
        if not (on_curve or on_outer):
            art[a] = art[b] = True
    # a curve node touching the cut keeps its true boundary condition
    art &= ~dirichlet & (hole < 0)
    sub.artificial = art
    return sub


def _exponents(p):
    return np.array([(i, j) for j in range(p + 1) for i in range(p + 1 - j)])


def build_glp_basis(sub: BoundarySubmesh, node: int, degree: int, neighbours=None) -> GLPBasis:
    """Weighted least-squares fit around ``node`` on a ring-grown stencil."""
    if sub.fixed[node]:
        raise ValueError(f"node {node} is fixed; it carries no GLP basis")
    nb = sub.neighbours() if neighbours is None else neighbours
    exps = _exponents(degree)
    need = int(np.ceil(STENCIL_FACTOR * len(exps)))
    stencil = [node]
    seen = {node}
    frontier = [node]
    x0 = sub.points[node]
    last = None
    while True:
        ring = sorted({j for i in frontier for j in nb[i]} - seen)
        if ring:
            stencil.extend(ring)
            seen.update(ring)
            frontier = ring
        if len(stencil) >= need or not ring:
            basis = _fit(sub, node, np.array(stencil), degree, exps, x0)
            if basis is not None and basis.cond <= COND_MAX:
                return basis
            last = basis
            if not ring:
                break
    raise StencilError(
        f"node {node}: stencil exhausted at {len(stencil)} nodes"
        + ("" if last is None else f" (condition {last.cond:.2e})")
    )


def _fit(sub, node, stencil, degree, exps, x0):
    if len(stencil) < len(exps):
        return None
    d = np.linalg.norm(sub.points[stencil] - x0, axis=1)
    radius = d[1:].mean() if len(d) > 1 else 1.0
    w = (1.0 + d / radius) ** (-degree)
    z = (sub.points[stencil] - x0) / radius
    V = _powers(z[:, 0], degree)[:, exps[:, 0]] * _powers(z[:, 1], degree)[:, exps[:, 1]]
    WV = w[:, None] * V
    # column scaling before the rank-revealing factorization
    cs = np.linalg.norm(WV, axis=0)
    cs[cs == 0.0] = 1.0
    Q, R, piv = sla.qr(WV / cs, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[-1] == 0.0:
        return None
    cond = float(diag[0] / diag[-1])
    # coef maps stencil values to monomial coefficients
    rinv_qt = sla.solve_triangular(R, Q.T * w[None, :])
    coef = np.empty_like(rinv_qt)
    coef[piv] = rinv_qt
    coef /= cs[:, None]
    return GLPBasis(node, stencil, degree, x0.copy(), float(radius), coef, cond, exps)


def _tri_geometry(pts, tris):
    """Hat-function gradients (T, 3, 2) and |2 area| (T,) of linear triangles."""
    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    T = np.stack([p1 - p0, p2 - p0], axis=2)
    det = T[:, 0, 0] * T[:, 1, 1] - T[:, 0, 1] * T[:, 1, 0]
    inv = np.empty_like(T)
    inv[:, 0, 0] = T[:, 1, 1] / det
    inv[:, 1, 1] = T[:, 0, 0] / det
    inv[:, 0, 1] = -T[:, 0, 1] / det
    inv[:, 1, 0] = -T[:, 1, 0] / det
    g1, g2 = inv[:, 0, :], inv[:, 1, :]
    return np.stack([-g1 - g2, g1, g2], axis=1), np.abs(det)


def _powers(z, p):
    out = np.empty(z.shape + (p + 1,))
    out[..., 0] = 1.0
    for k in range(1, p + 1):
        out[..., k] = out[..., k - 1] * z
    return out


def _monomial_grads(z, exps, radius):
    """Values and gradients of scaled monomials at local coordinates ``z``."""
    i, j = exps[:, 0], exps[:, 1]
    p = int(exps.max())
    px, py = _powers(z[..., 0], p), _powers(z[..., 1], p)
    xi, yj = px[..., i], py[..., j]
    dx = i * px[..., np.maximum(i - 1, 0)] * yj
    dy = j * xi * py[..., np.maximum(j - 1, 0)]
    r = np.asarray(radius, float)[..., None, None] if np.ndim(radius) else radius
    return xi * yj, dx / r, dy / r


def solve_post(
    sub: BoundarySubmesh,
    bases: dict,
    coeffs: PDECoefficients,
    bcs: BCSpec,
    domain: Domain,
    values: np.ndarray,
    normal: str = "facet",
    chunk: int = 20000,
) -> np.ndarray:
    """Corrected values at every submesh node (fixed ones returned unchanged).

    ``values`` are the SEM values at the submesh nodes.  Flux data is
    evaluated with the normal of each linear facet (``normal="facet"``),
    which is the normal the weak form integrates against; ``"exact"`` uses
    the curve normal at the closest point instead.
    """
    n = sub.n_nodes
    free = ~sub.fixed
    fi = np.nonzero(free)[0]
    missing = [i for i in fi if i not in bases]
    if missing:
        raise ValueError(f"no GLP basis for free nodes {missing[:5]}")
    degs = {bases[i].degree for i in fi}
    if len(degs) > 1:
        raise ValueError("all GLP bases must share one degree")
    deg = degs.pop() if degs else 1
    exps = _exponents(deg)
    xi, wq = quadrature_rule(TRI, 2 * deg)
    lam = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])

    grads, det = _tri_geometry(sub.points, sub.tris)
    x = np.einsum("mk,tki->tmi", lam, sub.points[sub.tris])
    w = wq[None, :] * det[:, None]
    vx, vy = coeffs.velocity(x[..., 0], x[..., 1])
    vx = np.broadcast_to(vx, w.shape)
    vy = np.broadcast_to(vy, w.shape)
    f = coeffs.source(x[..., 0], x[..., 1])

    # (node, triangle, local vertex) incidences of free nodes
    E = np.repeat(np.arange(len(sub.tris)), 3)
    K = np.tile(np.arange(3), len(sub.tris))
    I = sub.tris.ravel()
    keep = free[I]
    I, E, K = I[keep], E[keep], K[keep]
    phi = lam.T[K]
    wphi = w[E] * phi
    rhs = np.zeros(n)
    np.add.at(rhs, I, np.sum(wphi * f[E], axis=1))

    center = np.zeros((n, 2))
    radius = np.ones(n)
    for i in fi:
        center[i] = bases[i].center
        radius[i] = bases[i].radius
    rowpoly = np.zeros((n, len(exps)))
    for s0 in range(0, len(I), chunk):
        sl = slice(s0, s0 + chunk)
        Ii, Ei, Ki = I[sl], E[sl], K[sl]
        z = (x[Ei] - center[Ii][:, None, :]) / radius[Ii][:, None, None]
        _, mx, my = _monomial_grads(z, exps, radius[Ii])
        g = grads[Ei, Ki]
        coef_x = w[Ei] * g[:, 0:1] + wphi[sl] * vx[Ei]
        coef_y = w[Ei] * g[:, 1:2] + wphi[sl] * vy[Ei]
        contrib = np.einsum("cm,cma->ca", coef_x, mx) + np.einsum("cm,cma->ca", coef_y, my)
        np.add.at(rowpoly, Ii, contrib)

    rows, cols, vals = [], [], []
    for i in fi:
        b = bases[i]
        rows.append(np.full(len(b.stencil), i))
        cols.append(b.stencil)
        vals.append(rowpoly[i] @ b.coef)
    _post_neumann(sub, domain, bcs, rhs, free, normal)

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    fixed = sub.fixed
    u = np.asarray(values, float).copy()
    Ar = A[fi]
    Aff = Ar[:, fi].tocsc()
    rhs_f = rhs[fi] - Ar[:, np.nonzero(fixed)[0]] @ u[fixed]
    try:
        lu = spla.splu(Aff)
    except RuntimeError as exc:
        raise SolveError(f"post-processing system is singular: {exc}") from exc
    sol = lu.solve(rhs_f)
    sol = sol + lu.solve(rhs_f - Aff @ sol)
    if not np.all(np.isfinite(sol)):
        raise SolveError("post-processing produced non-finite values")
    u[fi] = sol
    return u


def _post_neumann(sub, domain, bcs, rhs, free, normal):
    if normal not in ("facet", "exact"):
        raise ValueError(f"unknown normal choice {normal!r}")
    s, w = line_rule(8)
    for hid, hole in enumerate(domain.holes):
        if hole.bc != NEUMANN:
            continue
        edges = np.array(
            [(a, b) for _, _, a, b in sub.boundary_edges() if sub.hole[a] == hid and sub.hole[b] == hid],
            dtype=np.int64,
        ).reshape(-1, 2)
        if len(edges) == 0:
            continue
        if bcs.g_n is None:
            raise SolveError("Neumann boundary present but no flux data given")
        pa, pb = sub.points[edges[:, 0]], sub.points[edges[:, 1]]
        x = pa[:, None, :] + s[None, :, None] * (pb - pa)[:, None, :]
        length = np.linalg.norm(pb - pa, axis=1)
        if normal == "exact":
            ta, tb = sub.t[edges[:, 0]], sub.t[edges[:, 1]]
            d = (tb - ta + np.pi) % TWO_PI - np.pi
            lo, hi = np.minimum(ta, ta + d), np.maximum(ta, ta + d)
            ts = hole.curve.closest_points(
                x.reshape(-1, 2), np.repeat(lo, len(s)), np.repeat(hi, len(s))
            )
            pts, nrm = hole.curve.eval(ts), hole.curve.normal(ts)
        else:
            tang = (pb - pa) / length[:, None]
            nrm = np.repeat(np.column_stack([tang[:, 1], -tang[:, 0]]), len(s), axis=0)
            pts = x.reshape(-1, 2)
        g = bcs.g_n(pts[:, 0], pts[:, 1], nrm[:, 0], nrm[:, 1]).reshape(len(edges), len(s))
        ga = (g * (w * (1.0 - s))).sum(1) * length
        gb = (g * (w * s)).sum(1) * length
        np.add.at(rhs, edges[:, 0], np.where(free[edges[:, 0]], ga, 0.0))
        np.add.at(rhs, edges[:, 1], np.where(free[edges[:, 1]], gb, 0.0))


def merge_back(parent_values: np.ndarray, sub: BoundarySubmesh, corrected: np.ndarray) -> np.ndarray:
    out = np.asarray(parent_values, float).copy()
    free = ~sub.fixed
    out[sub.parent[free]] = corrected[free]
    return out


@dataclass
class PostResult:
    values: np.ndarray
    submesh: BoundarySubmesh
    diagnostics: dict


def postprocess(
    mesh: HighOrderMesh,
    domain: Domain,
    sem_values: np.ndarray,
    coeffs: PDECoefficients,
    bcs: BCSpec,
    layers: int = 2,
    degree: int | None = None,
    normal: str = "facet",
) -> PostResult:
    """Extract, fit, re-solve and merge; returns the corrected parent field."""
    sub = extract_boundary_submesh(mesh, domain, layers)
    deg = mesh.p if degree is None else degree
    nb = sub.neighbours()
    bases = {
        int(i): build_glp_basis(sub, int(i), deg, nb) for i in np.nonzero(~sub.fixed)[0]
    }
    local = solve_post(sub, bases, coeffs, bcs, domain, sem_values[sub.parent], normal)
    merged = merge_back(sem_values, sub, local)
    sizes = np.array([len(b.stencil) for b in bases.values()])
    conds = np.array([b.cond for b in bases.values()])
    hist = {int(k): int(v) for k, v in zip(*np.unique(sizes, return_counts=True))}
    diag = {
        "submesh_nodes": int(sub.n_nodes),
        "submesh_triangles": int(len(sub.tris)),
        "artificial_nodes": int(sub.artificial.sum()),
        "changed_nodes": int((~sub.fixed).sum()),
        "stencil_histogram": hist,
        "max_condition": float(conds.max()) if len(conds) else 0.0,
        "median_condition": float(np.median(conds)) if len(conds) else 0.0,
        "glp_degree": int(deg),
        "odd_degree": bool(deg % 2 == 1),
    }
    return PostResult(merged, sub, diag)
