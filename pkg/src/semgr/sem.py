"""Galerkin assembly and solution of -lap(u) + v . grad(u) = f on a
high-order mixed mesh.

Weak form: int grad(u).grad(psi) + (v.grad(u)) psi = int f psi
+ int_{Gamma_N} g_N psi, with Dirichlet data imposed by row substitution.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import DIRICHLET, NEUMANN, TWO_PI, Domain
from .highorder import HighOrderMesh
from .quadrature import line_rule, quadrature_rule
from .reference import QUAD, TRI, reference_element

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


class SolveError(RuntimeError):
    pass


class SingularMapError(SolveError):
    pass


@dataclass(frozen=True)
class PDECoefficients:
    """Unit diffusion, velocity ``velocity(x, y) -> (vx, vy)`` and source."""

    velocity: Callable
    source: Field

    @staticmethod
    def zero_velocity(source: Field) -> "PDECoefficients":
        return PDECoefficients(lambda x, y: (np.zeros_like(x), np.zeros_like(y)), source)


def paper_velocity(x, y):
    return x, -y


@dataclass(frozen=True)
class BCSpec:
    """Dirichlet values ``u_d(x, y)`` and Neumann flux data.

    ``g_n(x, y, nx, ny)`` returns the normal derivative along the given unit
    normal.  ``normal`` selects which normal is passed on curved facets:
    ``"exact"`` (normal of the exact curve at the closest point) or
    ``"mesh"`` (normal of the discrete, possibly curved, facet).
    """

    u_d: Field
    g_n: Callable | None = None
    normal: str = "exact"


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet: np.ndarray
    values: np.ndarray
    raw_matrix: sp.csr_matrix = field(repr=False, default=None)
    raw_rhs: np.ndarray = field(repr=False, default=None)
    stats: dict = field(default_factory=dict)

    @property
    def n_dofs(self) -> int:
        return len(self.rhs)


@dataclass
class SolutionField:
    mesh: HighOrderMesh
    values: np.ndarray
    residual: float = 0.0
    stats: dict = field(default_factory=dict)

    def element_values(self, shape: str, e: int) -> np.ndarray:
        conn = self.mesh.quad_conn if shape == QUAD else self.mesh.tri_conn
        return self.values[conn[e]]

    def eval_element(self, shape: str, e: int, xi) -> np.ndarray:
        ref = reference_element(shape, self.mesh.p, self.mesh.family)
        phi, _ = ref.eval(np.atleast_2d(xi))
        return phi @ self.element_values(shape, e)


def _geometric_factors(shape, geom, xi, family):
    """x, det J and inverse Jacobian for a stack of same-degree elements."""
    from .highorder import _degree_from_count

    gref = reference_element(shape, _degree_from_count(shape, geom.shape[1]), family)
    gphi, gdphi = gref.eval(xi)
    x = np.einsum("mk,eki->emi", gphi, geom)
    J = np.einsum("mkj,eki->emij", gdphi, geom)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    return x, det, inv, J


def element_matrices(shape, p, family, geom, coeffs, degree):
    """Local operator and load vectors for elements sharing one geometry degree.

    Returns ``(A, b, detmin)`` with shapes (E, n, n) and (E, n).
    """
    ref = reference_element(shape, p, family)
    xi, w = quadrature_rule(shape, degree)
    phi, dphi = ref.eval(xi)
    x, det, inv, _ = _geometric_factors(shape, geom, xi, family)
    # grad_x phi_n = sum_j dphi/dxi_j * dxi_j/dx_i
    g = np.einsum("mnj,emji->emni", dphi, inv)
    wd = w[None, :] * det
    K = np.einsum("em,emai,embi->eab", wd, g, g)
    vx, vy = coeffs.velocity(x[..., 0], x[..., 1])
    vg = g[..., 0] * np.asarray(vx)[..., None] + g[..., 1] * np.asarray(vy)[..., None]
    C = np.einsum("em,ma,emb->eab", wd, phi, vg)
    f = coeffs.source(x[..., 0], x[..., 1])
    b = np.einsum("em,em,ma->ea", wd, f, phi)
    return K + C, b, det.min(axis=1)


def _quad_degree(p: int, curved: bool) -> int:
    return 2 * p + 4 if curved else 2 * p + 2


def assemble(
    mesh: HighOrderMesh,
    coeffs: PDECoefficients,
    bcs: BCSpec,
    domain: Domain,
) -> AssembledSystem:
    n = mesh.n_nodes
    p, fam = mesh.p, mesh.family
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)

    def scatter(conn, A, b):
        k = conn.shape[1]
        rows.append(np.repeat(conn, k, axis=1).ravel())
        cols.append(np.tile(conn, (1, k)).ravel())
        vals.append(A.ravel())
        np.add.at(rhs, conn, b)

    if mesh.n_quads:
        geom = mesh.linear.nodes[mesh.linear.quads]
        A, b, dmin = element_matrices(QUAD, p, fam, geom, coeffs, _quad_degree(p, False))
        _check(dmin, np.arange(mesh.n_quads))
        scatter(mesh.quad_conn, A, b)
    nt = len(mesh.tri_conn)
    if nt:
        straight = np.array([t for t in range(nt) if t not in mesh.tri_geom], dtype=int)
        curved = np.array(sorted(mesh.tri_geom), dtype=int)
        if len(straight):
            geom = mesh.linear.nodes[mesh.linear.tris[straight]]
            A, b, dmin = element_matrices(TRI, p, fam, geom, coeffs, _quad_degree(p, False))
            _check(dmin, mesh.n_quads + straight)
            scatter(mesh.tri_conn[straight], A, b)
        if len(curved):
            geom = np.stack([mesh.tri_geom[t] for t in curved])
            A, b, dmin = element_matrices(TRI, p, fam, geom, coeffs, _quad_degree(p, True))
            _check(dmin, mesh.n_quads + curved)
            scatter(mesh.tri_conn[curved], A, b)

    _neumann(mesh, domain, bcs, rhs)

    raw = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    raw.sum_duplicates()
    mask = dirichlet_mask(mesh, domain)
    values = np.zeros(n)
    xd = mesh.nodes[mask]
    values[mask] = bcs.u_d(xd[:, 0], xd[:, 1])
    A, b = _substitute(raw, rhs, mask, values)
    return AssembledSystem(A, b, mask, values, raw, rhs)


def _check(dmin, ids):
    bad = np.nonzero(np.atleast_1d(dmin) <= 0.0)[0]
    if len(bad):
        raise SingularMapError(f"non-positive Jacobian in element {int(ids[bad[0]])}")


def dirichlet_mask(mesh: HighOrderMesh, domain: Domain) -> np.ndarray:
    mask = mesh.node_outer.copy()
    for hid, hole in enumerate(domain.holes):
        if hole.bc == DIRICHLET:
            mask |= mesh.node_hole == hid
    return mask


def _substitute(A, b, mask, values):
    """Identity rows for Dirichlet dofs; their columns moved to the rhs."""
    free = ~mask
    b = b - A @ values
    b[mask] = values[mask]
    D = sp.diags(free.astype(float))
    A = (D @ A @ D + sp.diags(mask.astype(float))).tocsr()
    A.eliminate_zeros()
    return A, b


def curved_facet_quadrature(mesh: HighOrderMesh, t: int, k: int, degree: int):
    """Quadrature points, weights (including |dx/ds|) and mesh normals on a
    triangle facet, plus the solution basis values there."""
    from .highorder import _degree_from_count

    geom = mesh.triangle_geom(t)
    gdeg = _degree_from_count(TRI, len(geom))
    gref = reference_element(TRI, gdeg, mesh.family)
    ref = reference_element(TRI, mesh.p, mesh.family)
    s, w = line_rule(degree)
    xi = gref.edge_point(k, s)
    verts = gref.nodes[:3]
    dxi = verts[(k + 1) % 3] - verts[k]
    gphi, gdphi = gref.eval(xi)
    x = gphi @ geom
    J = np.einsum("mkj,ki->mij", gdphi, geom)
    tang = J @ dxi
    speed = np.linalg.norm(tang, axis=1)
    # element is ccw: the outward normal is the right normal of the edge
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]]) / speed[:, None]
    phi, _ = ref.eval(xi)
    return x, w * speed, nrm, phi


def _neumann(mesh: HighOrderMesh, domain: Domain, bcs: BCSpec, rhs: np.ndarray):
    facets = _boundary_hole_facets(mesh)
    deg = 2 * max(mesh.p, mesh.q) + 4
    for t, k, hid in facets:
        hole = domain.holes[hid]
        if hole.bc != NEUMANN:
            continue
        if bcs.g_n is None:
            raise SolveError("Neumann boundary present but no flux data given")
        x, w, nrm, phi = curved_facet_quadrature(mesh, t, k, deg)
        if bcs.normal == "exact":
            tri = mesh.linear.tris[t]
            ta = mesh.linear.node_t[tri[k]]
            tb = mesh.linear.node_t[tri[(k + 1) % 3]]
            lo, hi = _interval(ta, tb)
            curve = hole.curve
            ts = curve.closest_points(x, lo, hi)
            pts = curve.eval(ts)
            nrm = curve.normal(ts)
        else:
            pts = x
        g = bcs.g_n(pts[:, 0], pts[:, 1], nrm[:, 0], nrm[:, 1])
        conn = mesh.tri_conn[t]
        np.add.at(rhs, conn, phi.T @ (w * g))


def _interval(ta, tb):
    d = (tb - ta + np.pi) % TWO_PI - np.pi
    return (ta, ta + d) if d >= 0 else (ta + d, ta)


def _boundary_hole_facets(mesh: HighOrderMesh):
    """(triangle, local edge, hole id) for every facet lying on a hole curve,
    curved or left straight."""
    lin = mesh.linear
    nq = lin.n_quads
    out = []
    for e, k in lin.curved_facets():
        tri = lin.tris[e - nq]
        out.append((int(e - nq), int(k), int(lin.node_tag[tri[k]])))
    return out


def _relres(A, x, b):
    bn = np.linalg.norm(b)
    return float(np.linalg.norm(b - A @ x) / (bn if bn > 0 else 1.0))


def _gmres(A, b, tol, x0=None):
    ilu = spla.spilu(A.tocsc(), drop_tol=1e-6, fill_factor=30)
    M = spla.LinearOperator(A.shape, ilu.solve)
    x, info = spla.gmres(A, b, x0=x0, M=M, rtol=tol, atol=0.0, restart=100, maxiter=10)
    return x, info


def solve(system: AssembledSystem, tol: float = 1e-12, method: str = "direct") -> np.ndarray:
    """Solve and verify ``|Ax - b| / |b| <= tol``.  Returns the solution vector.

    The direct path uses sparse LU with up to five steps of iterative
    refinement and falls back to ILU-preconditioned GMRES.
    """
    A, b = system.matrix, system.rhs
    start = time.perf_counter()
    if method == "direct":
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise SolveError(f"factorization failed: {exc}") from exc
        x = lu.solve(b)
        res = _relres(A, x, b)
        for _ in range(5):
            if res <= tol:
                break
            xn = x + lu.solve(b - A @ x)
            rn = _relres(A, xn, b)
            if not rn < res:
                break
            x, res = xn, rn
        if res > tol:
            log.debug("LU residual %.2e above tolerance, trying gmres", res)
            xg, info = _gmres(A, b, tol, x0=x)
            if info == 0 and np.all(np.isfinite(xg)):
                x = xg
    elif method == "gmres":
        x, info = _gmres(A, b, tol)
        if info != 0:
            raise SolveError(f"gmres did not converge (info={info})")
    else:
        raise ValueError(f"unknown solver {method!r}")
    res = _relres(A, x, b)
    if not np.all(np.isfinite(x)) or res > tol:
        raise SolveError(f"relative residual {res:.3e} exceeds tolerance {tol:.1e}")
    log.debug("solved %d dofs in %.3fs (residual %.2e)", len(b), time.perf_counter() - start, res)
    system.stats = {"residual": res, "seconds": time.perf_counter() - start}
    return x


def solve_field(mesh, coeffs, bcs, domain, tol=1e-12, method="direct") -> SolutionField:
    system = assemble(mesh, coeffs, bcs, domain)
    x = solve(system, tol, method)
    return SolutionField(mesh, x, system.stats["residual"], dict(system.stats, dofs=mesh.n_nodes))
