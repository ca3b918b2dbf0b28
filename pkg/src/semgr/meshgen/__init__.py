"""Linear mixed-mesh generation: structured quads inside, graded triangles
around curved holes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Domain, winding_number
from .gap import (
    TriangulationError,
    UnflippableError,
    enforce_single_boundary_facet,
    triangulate_gap,
)
from .grid import CavityLoopError, cut_near_boundary, structured_grid
from .mesh import (
    GAP,
    INTERIOR,
    OUTER,
    STRUCTURED,
    LinearMixedMesh,
    MeshError,
    NonManifoldError,
    build_ahf,
    element_angles,
    triangle_angles,
    signed_areas,
)
from .sizing import (
    SizingField,
    march_parameters,
    sizing_from_curvature,
    target_length,
    uniform_sizing,
)

GR_MODES = ("none", "h", "hp")


@dataclass(frozen=True)
class MeshParams:
    h: float
    gr_mode: str = "none"
    theta_max: float = 0.2
    h_min: float | None = None
    h_max: float | None = None
    clearance_factor: float = 1.5

    def resolved(self):
        h_min = self.h / 8.0 if self.h_min is None else self.h_min
        h_max = self.h if self.h_max is None else self.h_max
        return h_min, h_max


def hole_sizing(curve, params: MeshParams) -> SizingField:
    h_min, h_max = params.resolved()
    if params.gr_mode == "none":
        return uniform_sizing(h_max)
    return sizing_from_curvature(curve, params.theta_max, h_min, h_max)


def generate_mesh(domain: Domain, params: MeshParams) -> LinearMixedMesh:
    """Full linear pipeline: grid, cut, gap triangulation, edge flips."""
    if params.gr_mode not in GR_MODES:
        raise ValueError(f"gr_mode must be one of {GR_MODES}")
    grid = structured_grid(domain.bbox, params.h)
    if not domain.holes:
        return grid
    trimmed, loops = cut_near_boundary(grid, domain, params.clearance_factor * params.h)
    nodes = [trimmed.nodes]
    tags = [trimmed.node_tag]
    ts = [trimmed.node_t]
    tris = []
    offset = trimmed.n_nodes
    _, h_max = params.resolved()
    for hid, hole in enumerate(domain.holes):
        probe = hole.curve.eval(0.0)[None]
        owners = [
            lp for lp in loops if winding_number(trimmed.nodes[lp], probe)[0] != 0
        ]
        if len(owners) != 1:
            raise CavityLoopError(f"hole {hid}: expected one enclosing loop, found {len(owners)}")
        loop = owners[0]
        sizing = hole_sizing(hole.curve, params)
        pts, t, t_curve, n_loop = triangulate_gap(
            trimmed.nodes[loop], hole.curve, sizing, h_far=max(params.h, h_max)
        )
        n_new = len(pts) - n_loop
        gid = np.empty(len(pts), dtype=np.int64)
        gid[:n_loop] = loop
        gid[n_loop:] = offset + np.arange(n_new)
        tris.append(gid[t])
        nodes.append(pts[n_loop:])
        tag = np.full(n_new, INTERIOR, dtype=np.int64)
        tag[: len(t_curve)] = hid
        tp = np.full(n_new, np.nan)
        tp[: len(t_curve)] = t_curve
        tags.append(tag)
        ts.append(tp)
        offset += n_new
    mesh = LinearMixedMesh(
        np.vstack(nodes),
        trimmed.quads,
        np.vstack(tris),
        np.concatenate(tags),
        np.concatenate(ts),
    )
    return enforce_single_boundary_facet(mesh)


__all__ = [
    "GAP",
    "GR_MODES",
    "INTERIOR",
    "OUTER",
    "STRUCTURED",
    "CavityLoopError",
    "LinearMixedMesh",
    "MeshError",
    "MeshParams",
    "NonManifoldError",
    "SizingField",
    "TriangulationError",
    "UnflippableError",
    "build_ahf",
    "cut_near_boundary",
    "element_angles",
    "triangle_angles",
    "enforce_single_boundary_facet",
    "generate_mesh",
    "hole_sizing",
    "march_parameters",
    "signed_areas",
    "sizing_from_curvature",
    "structured_grid",
    "target_length",
    "triangulate_gap",
    "uniform_sizing",
]
