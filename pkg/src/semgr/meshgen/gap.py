"""Triangulation of the gap between a cavity loop and a hole curve, and the
edge-flip pass that leaves every triangle with at most one curved facet."""

from __future__ import annotations

import numpy as np
import triangle as tr

from ..geometry import ParametricCurve, winding_number
from .mesh import LinearMixedMesh, MeshError, build_ahf, signed_areas
from .sizing import SizingField, march_parameters

MIN_ANGLE = 20.0
GRADATION = 0.3


class TriangulationError(MeshError):
    pass


class UnflippableError(MeshError):
    pass


def _interior_point(curve: ParametricCurve, poly: np.ndarray) -> np.ndarray:
    c = np.asarray(curve.center, float)
    if winding_number(poly, c[None])[0] != 0:
        return c
    # fall back to a point just inside the curve along the normal
    t = 0.0
    return curve.eval(t) + 1e-4 * curve.normal(t)


def _size_at(x, curve_pts, curve_h, h_far):
    d = np.linalg.norm(x[:, None, :] - curve_pts[None, :, :], axis=-1)
    return np.minimum(h_far, np.min(curve_h[None, :] + GRADATION * d, axis=1))


def triangulate_gap(
    loop_pts: np.ndarray,
    curve: ParametricCurve,
    sizing: SizingField,
    h_far: float,
    max_passes: int = 12,
):
    """Mesh the annulus between a closed loop and a curve lying inside it.

    Returns ``(points, tris, t_curve, n_loop)``: ``points`` starts with the
    ``n_loop`` loop points in input order, followed by the curve nodes (with
    parameters ``t_curve``) and then interior Steiner points.
    """
    t_curve = march_parameters(curve, sizing)
    cpts = curve.eval(t_curve)
    n_loop, n_curve = len(loop_pts), len(cpts)
    verts = np.vstack([loop_pts, cpts])
    seg_loop = np.column_stack([np.arange(n_loop), (np.arange(n_loop) + 1) % n_loop])
    seg_curve = n_loop + np.column_stack(
        [np.arange(n_curve), (np.arange(n_curve) + 1) % n_curve]
    )
    hole_pt = _interior_point(curve, cpts)
    pslg = {
        "vertices": verts,
        "segments": np.vstack([seg_loop, seg_curve]),
        "holes": hole_pt[None],
    }
    curve_h = np.linalg.norm(np.roll(cpts, -1, axis=0) - cpts, axis=1)
    curve_h = 0.5 * (curve_h + np.roll(curve_h, 1))
    out = tr.triangulate(pslg, f"pq{MIN_ANGLE:g}YQ")
    for _ in range(max_passes):
        p, t = out["vertices"], out["triangles"]
        cen = p[t].mean(axis=1)
        target = _size_at(cen, cpts, curve_h, h_far)
        max_area = np.sqrt(3.0) / 4.0 * target**2
        a = np.abs(signed_areas(p, t))
        if np.all(a <= 1.5 * max_area):
            break
        out = tr.triangulate(
            {
                "vertices": p,
                "triangles": t,
                "segments": out["segments"],
                "holes": hole_pt[None],
                "triangle_max_area": max_area,
            },
            f"rpq{MIN_ANGLE:g}YQa",
        )
    p, t = out["vertices"], out["triangles"].astype(np.int64)
    if not np.allclose(p[: n_loop + n_curve], verts, atol=0.0, rtol=0.0):
        raise TriangulationError("triangulator moved or reordered input vertices")
    a = signed_areas(p, t)
    if np.any(a == 0.0):
        raise TriangulationError("degenerate triangle in gap mesh")
    t[a < 0] = t[a < 0][:, [0, 2, 1]]
    # restore exact curve coordinates (triangle round-trips through doubles,
    # but be explicit)
    p = p.copy()
    p[n_loop : n_loop + n_curve] = cpts
    return p, t, t_curve, n_loop


def _curved(mesh: LinearMixedMesh, a: int, b: int) -> bool:
    return mesh.is_curved_facet(a, b)


def enforce_single_boundary_facet(mesh: LinearMixedMesh) -> LinearMixedMesh:
    """Flip interior edges so that no triangle has two facets on a curve."""
    mesh = mesh.copy()
    nq = mesh.n_quads
    for _sweep in range(len(mesh.tris) + 1):
        sib = build_ahf(mesh.elements)
        changed = False
        for ti in range(len(mesh.tris)):
            e = nq + ti
            tri = mesh.tris[ti]
            bnd = [
                k
                for k in range(3)
                if sib[e, k] < 0 and _curved(mesh, tri[k], tri[(k + 1) % 3])
            ]
            if len(bnd) < 2:
                continue
            if len(bnd) == 3:
                raise UnflippableError(f"triangle {e} has all facets on the curve")
            k = ({0, 1, 2} - set(bnd)).pop()
            twin = sib[e, k]
            if twin < 0:
                raise UnflippableError(f"triangle {e}: third edge is on the boundary")
            e2, k2 = divmod(int(twin), 4)
            if e2 < nq:
                raise UnflippableError(f"triangle {e}: neighbour {e2} is a quad")
            t2 = e2 - nq
            # tri = (c, a, b) with interior edge c->a at local k
            c, a_, b_ = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            d = mesh.tris[t2][(k2 + 2) % 3]
            new1 = np.array([b_, c, d])
            new2 = np.array([a_, b_, d])
            if np.any(signed_areas(mesh.nodes, np.vstack([new1, new2])) <= 0.0):
                raise UnflippableError(f"flip of triangle {e} would invert an element")
            mesh.tris[ti] = new1
            mesh.tris[t2] = new2
            changed = True
            break
        if not changed:
            mesh.sib = build_ahf(mesh.elements)
            return mesh
    raise UnflippableError("edge flipping did not terminate")
