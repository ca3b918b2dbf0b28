"""High-order solution and geometry nodes on a linear mixed mesh.

Straight elements get the affine/bilinear image of the reference nodes.
Triangles with a facet on a hole curve are lifted by repeated elevation:
starting from the linear element, the degree-q geometry is interpolated from
the degree-(q-1) one and its curved-edge nodes are projected onto the exact
curve, until q reaches the target geometry degree plus two; the target
geometry is then interpolated back down from that element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, GeometryError, ParametricCurve, TWO_PI
from .meshgen.mesh import OUTER, LinearMixedMesh
from .quadrature import quadrature_rule
from .reference import GL, QUAD, TRI, gauss_lobatto_1d, nodes_1d, reference_element

__all__ = [
    "CurvedElementError",
    "HighOrderMesh",
    "elevate_and_project",
    "gauss_lobatto_1d",
    "insert_high_order_nodes",
    "jacobian_extrema",
    "map_points",
]

LIFT = 2


class CurvedElementError(GeometryError):
    def __init__(self, element: int, message: str):
        super().__init__(f"element {element}: {message}")
        self.element = element


def map_points(shape: str, geom: np.ndarray, xi: np.ndarray, family: str = GL):
    """Physical points and Jacobians of the map defined by geometry nodes.

    ``geom`` holds the nodes of a reference element of degree inferred from
    its length.  Returns ``(x, J)`` with shapes (m, 2) and (m, 2, 2), where
    ``J[:, i, j] = d x_i / d xi_j``.
    """
    ref = reference_element(shape, _degree_from_count(shape, len(geom)), family)
    phi, dphi = ref.eval(xi)
    x = phi @ geom
    J = np.einsum("mnj,ni->mij", dphi, geom)
    return x, J


def _degree_from_count(shape: str, n: int) -> int:
    if shape == QUAD:
        p = int(round(np.sqrt(n))) - 1
        if (p + 1) ** 2 == n:
            return p
    else:
        for p in range(1, 16):
            if (p + 1) * (p + 2) // 2 == n:
                return p
    raise ValueError(f"no {shape} element has {n} nodes")


def _unwrap_interval(ta: float, tb: float):
    """Shortest parameter arc from ta to tb (may wrap through 0)."""
    d = (tb - ta + np.pi) % TWO_PI - np.pi
    return ta, ta + d


def elevate_and_project(
    verts: np.ndarray,
    edge: int,
    curve: ParametricCurve,
    t_a: float,
    t_b: float,
    degree: int,
    family: str = GL,
    element: int = -1,
    lift: int = LIFT,
) -> np.ndarray:
    """Degree-``degree`` geometry nodes of a triangle with one curved edge.

    ``verts`` are the three vertices (ccw); local edge ``edge`` runs from
    vertex ``edge`` (curve parameter ``t_a``) to vertex ``edge+1``
    (parameter ``t_b``).
    """
    lo, hi = _unwrap_interval(t_a, t_b)
    forward = hi >= lo
    interval = (lo, hi) if forward else (hi, lo)
    geo = np.asarray(verts, dtype=float)
    prev = reference_element(TRI, 1, family)
    top = degree + lift
    for q in range(2, top + 1):
        ref = reference_element(TRI, q, family)
        geo = prev.eval(ref.nodes)[0] @ geo
        geo = _project_edge(geo, ref, edge, curve, interval, element)
        prev = ref
    ref = reference_element(TRI, degree, family)
    if degree < top:
        geo = prev.eval(ref.nodes)[0] @ geo
    # snap the curved-edge nodes back onto the exact curve
    geo = _project_edge(geo, ref, edge, curve, interval, element)
    return geo


def _project_edge(geo, ref, edge, curve, interval, element):
    ids = ref.edge_node_ids(edge)[1:-1]
    out = geo.copy()
    for i in ids:
        try:
            t = curve.closest_point(geo[i], interval=interval)
        except GeometryError as exc:
            raise CurvedElementError(element, f"projection failed: {exc}") from exc
        out[i] = curve.eval(t)
    return out


def jacobian_extrema(shape: str, geom: np.ndarray, degree: int | None = None, family: str = GL):
    """(min det J, max det J) at the assembly quadrature points.

    ``degree`` is the solution degree that selects the quadrature rule; it
    defaults to the geometry degree.
    """
    gdeg = _degree_from_count(shape, len(geom))
    p = gdeg if degree is None else degree
    exact = 2 * p + 2 + (2 if gdeg > 1 and shape == TRI else 0)
    xi, _ = quadrature_rule(shape, exact)
    _, J = map_points(shape, geom, xi, family)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    return float(det.min()), float(det.max())


@dataclass
class HighOrderMesh:
    """Degree-p solution nodes with per-element geometry.

    Quads are straight (bilinear, geometry = 4 vertices).  Straight triangles
    use their 3 vertices; curved triangles keep degree-q geometry nodes in
    ``tri_geom``.
    """

    linear: LinearMixedMesh
    p: int
    q: int
    family: str
    nodes: np.ndarray
    quad_conn: np.ndarray
    tri_conn: np.ndarray
    tri_geom: dict = field(default_factory=dict)
    curved_edge: dict = field(default_factory=dict)
    node_hole: np.ndarray = None
    node_outer: np.ndarray = None
    node_t: np.ndarray = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_quads(self) -> int:
        return len(self.quad_conn)

    def quad_geom(self, e: int) -> np.ndarray:
        return self.linear.nodes[self.linear.quads[e]]

    def triangle_geom(self, t: int) -> np.ndarray:
        g = self.tri_geom.get(t)
        if g is not None:
            return g
        return self.linear.nodes[self.linear.tris[t]]

    def structured_only_nodes(self) -> np.ndarray:
        """Mask of nodes that belong to quads and to no triangle."""
        in_quad = np.zeros(self.n_nodes, dtype=bool)
        in_quad[np.unique(self.quad_conn)] = True
        in_tri = np.zeros(self.n_nodes, dtype=bool)
        if len(self.tri_conn):
            in_tri[np.unique(self.tri_conn)] = True
        return in_quad & ~in_tri

    def min_jacobian(self) -> float:
        best = np.inf
        for e in range(self.n_quads):
            best = min(best, jacobian_extrema(QUAD, self.quad_geom(e), self.p)[0])
        for t in range(len(self.tri_conn)):
            best = min(best, jacobian_extrema(TRI, self.triangle_geom(t), self.p)[0])
        return best

    def curved_node_residual(self, domain: Domain) -> float:
        """Largest distance from a curved-edge geometry node to its curve."""
        worst = 0.0
        for t, g in self.tri_geom.items():
            k, hid = self.curved_edge[t]
            ref = reference_element(TRI, self.q, self.family)
            curve = domain.holes[hid].curve
            for i in ref.edge_node_ids(k):
                worst = max(worst, curve.distance(g[i]))
        return worst


def insert_high_order_nodes(
    mesh: LinearMixedMesh,
    domain: Domain,
    p: int,
    q: int | None = None,
    family: str = GL,
    strict_geometry: bool = True,
) -> HighOrderMesh:
    """Lift a linear mesh to degree-p solution nodes and degree-q geometry.

    With ``strict_geometry=False`` a curved triangle whose lifting fails
    (projection failure or non-positive Jacobian) keeps straight edges.
    """
    q = p if q is None else q
    if p < 1 or not p <= q <= p + 2:
        raise ValueError(f"need 1 <= p <= q <= p + 2, got p={p}, q={q}")
    nq = mesh.n_quads
    ref_q = reference_element(QUAD, p, family)
    ref_t = reference_element(TRI, p, family)
    s = 0.5 * (nodes_1d(p, family)[1:-1] + 1.0)

    # curved triangles: local edge and hole id
    curved_edge = {}
    for e, k in mesh.curved_facets():
        if e < nq:
            raise CurvedElementError(int(e), "quad touches a curved boundary")
        tri = mesh.tris[e - nq]
        hid = int(mesh.node_tag[tri[k]])
        if (e - nq) in curved_edge:
            raise CurvedElementError(int(e), "more than one curved facet")
        curved_edge[int(e - nq)] = (int(k), hid)

    tri_geom = {}
    for t, (k, hid) in sorted(curved_edge.items()):
        tri = mesh.tris[t]
        curve = domain.holes[hid].curve
        a, b = tri[k], tri[(k + 1) % 3]
        try:
            geo = elevate_and_project(
                mesh.nodes[tri], k, curve, mesh.node_t[a], mesh.node_t[b], q, family, nq + t
            )
            if jacobian_extrema(TRI, geo, p, family)[0] <= 0.0:
                raise CurvedElementError(nq + t, "non-positive Jacobian determinant")
        except CurvedElementError:
            if strict_geometry:
                raise
            continue
        tri_geom[t] = geo
    curved_edge = {t: v for t, v in curved_edge.items() if t in tri_geom}

    # global numbering: vertices, then edge nodes, then element interiors
    coords = [mesh.nodes]
    node_hole = [np.where(mesh.node_tag >= 0, mesh.node_tag, -1)]
    node_outer = [mesh.node_tag == OUTER]
    node_t = [mesh.node_t.copy()]
    nxt = mesh.n_nodes
    edge_ids = {}
    m = p - 1

    def tri_solution_points(t):
        g = tri_geom[t]
        x, _ = map_points(TRI, g, ref_t.nodes, family)
        return x

    curved_pts = {t: tri_solution_points(t) for t in tri_geom}
    curved_key = {}
    for t, (k, hid) in curved_edge.items():
        tri = mesh.tris[t]
        a, b = int(tri[k]), int(tri[(k + 1) % 3])
        curved_key[(min(a, b), max(a, b))] = (t, k, hid)

    elems = mesh.elements
    for e in range(len(elems)):
        nv = 4 if elems[e, 3] >= 0 else 3
        for k in range(nv):
            a, b = int(elems[e, k]), int(elems[e, (k + 1) % nv])
            key = (min(a, b), max(a, b))
            if key in edge_ids or m == 0:
                continue
            ids = np.arange(nxt, nxt + m)
            nxt += m
            edge_ids[key] = ids
            pa, pb = mesh.nodes[key[0]], mesh.nodes[key[1]]
            hole = -1
            outer = bool(mesh.node_tag[key[0]] == OUTER and mesh.node_tag[key[1]] == OUTER)
            tvals = np.full(m, np.nan)
            if key in curved_key:
                t, kk, hid = curved_key[key]
                loc = ref_t.edge_node_ids(kk)[1:-1]
                pts = curved_pts[t][loc]
                if int(mesh.tris[t][kk]) != key[0]:
                    pts = pts[::-1]
                hole = hid
                curve = domain.holes[hid].curve
                lo, hi = sorted(_unwrap_interval(mesh.node_t[key[0]], mesh.node_t[key[1]]))
                tvals = curve.closest_points(pts, lo, hi) % TWO_PI
            else:
                pts = pa + s[:, None] * (pb - pa)
            coords.append(pts)
            node_hole.append(np.full(m, hole))
            node_outer.append(np.full(m, outer))
            node_t.append(tvals)

    def edge_nodes(a, b):
        ids = edge_ids[(min(a, b), max(a, b))]
        return ids if a < b else ids[::-1]

    quad_conn = np.empty((nq, ref_q.n_nodes), dtype=np.int64)
    n_int_q = ref_q.n_nodes - 4 - 4 * m
    for e in range(nq):
        v = mesh.quads[e]
        row = [v]
        for k in range(4):
            if m:
                row.append(edge_nodes(int(v[k]), int(v[(k + 1) % 4])))
        ids = np.arange(nxt, nxt + n_int_q)
        nxt += n_int_q
        row.append(ids)
        quad_conn[e] = np.concatenate(row)
        if n_int_q:
            geom = mesh.nodes[v]
            x, _ = map_points(QUAD, geom, ref_q.nodes[ref_q.interior_node_ids()])
            coords.append(x)
            node_hole.append(np.full(n_int_q, -1))
            node_outer.append(np.zeros(n_int_q, dtype=bool))
            node_t.append(np.full(n_int_q, np.nan))

    nt = len(mesh.tris)
    tri_conn = np.empty((nt, ref_t.n_nodes), dtype=np.int64)
    n_int_t = ref_t.n_nodes - 3 - 3 * m
    for t in range(nt):
        v = mesh.tris[t]
        row = [v]
        for k in range(3):
            if m:
                row.append(edge_nodes(int(v[k]), int(v[(k + 1) % 3])))
        ids = np.arange(nxt, nxt + n_int_t)
        nxt += n_int_t
        row.append(ids)
        tri_conn[t] = np.concatenate(row)
        if n_int_t:
            loc = ref_t.interior_node_ids()
            if t in curved_pts:
                x = curved_pts[t][loc]
            else:
                x, _ = map_points(TRI, mesh.nodes[v], ref_t.nodes[loc])
            coords.append(x)
            node_hole.append(np.full(n_int_t, -1))
            node_outer.append(np.zeros(n_int_t, dtype=bool))
            node_t.append(np.full(n_int_t, np.nan))

    return HighOrderMesh(
        linear=mesh,
        p=p,
        q=q,
        family=family,
        nodes=np.vstack(coords),
        quad_conn=quad_conn,
        tri_conn=tri_conn,
        tri_geom=tri_geom,
        curved_edge=curved_edge,
        node_hole=np.concatenate(node_hole).astype(np.int64),
        node_outer=np.concatenate(node_outer).astype(bool),
        node_t=np.concatenate(node_t),
    )
