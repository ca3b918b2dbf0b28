"""Uniform quad grid over the bounding box and the cut around holes."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import INSIDE, Domain
from .mesh import INTERIOR, OUTER, LinearMixedMesh, MeshError


class CavityLoopError(MeshError):
    pass


def structured_grid(bbox, h: float) -> LinearMixedMesh:
    """Axis-aligned grid with ceil(W/h) x ceil(H/h) counterclockwise quads."""
    x0, y0, x1, y1 = bbox
    if h <= 0 or x1 <= x0 or y1 <= y0:
        raise ValueError("need h > 0 and a non-degenerate box")
    nx = max(1, math.ceil((x1 - x0) / h - 1e-9))
    ny = max(1, math.ceil((y1 - y0) / h - 1e-9))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    n0 = (j * (nx + 1) + i).ravel()
    quads = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    on_box = (
        np.isclose(nodes[:, 0], x0)
        | np.isclose(nodes[:, 0], x1)
        | np.isclose(nodes[:, 1], y0)
        | np.isclose(nodes[:, 1], y1)
    )
    tag = np.where(on_box, OUTER, INTERIOR)
    return LinearMixedMesh(nodes, quads, np.zeros((0, 3)), tag, np.full(len(nodes), np.nan))


def _exposed_edges(quads, keep_outer_nodes, nodes_outer):
    count = {}
    for q in quads:
        for k in range(4):
            a, b = int(q[k]), int(q[(k + 1) % 4])
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    directed = []
    for q in quads:
        for k in range(4):
            a, b = int(q[k]), int(q[(k + 1) % 4])
            if count[(min(a, b), max(a, b))] == 1 and not (nodes_outer[a] and nodes_outer[b]):
                directed.append((a, b))
    return directed


def _trace_loops(directed):
    succ = {}
    for a, b in directed:
        if a in succ:
            raise CavityLoopError(f"node {a} has two outgoing cavity edges")
        succ[a] = b
    loops = []
    seen = set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start:
            if cur not in succ or cur in seen:
                raise CavityLoopError("cavity edges do not form closed loops")
            loop.append(cur)
            seen.add(cur)
            cur = succ[cur]
        loops.append(loop)
    return loops


def cut_near_boundary(mesh: LinearMixedMesh, domain: Domain, clearance: float):
    """Remove nodes outside the domain or within ``clearance`` of a hole.

    Returns ``(trimmed_mesh, loops)``; each loop lists node ids of the
    trimmed mesh counterclockwise around its cavity.  Quads that would leave a pinched (non-manifold) cavity
    boundary are removed as well.
    """
    if clearance <= 0:
        raise ValueError("clearance must be positive")
    if not domain.holes:
        return mesh, []
    nodes = mesh.nodes
    remove = domain.classify(nodes) != INSIDE
    remove &= mesh.node_tag != OUTER
    for hole in domain.holes:
        poly = hole.curve.polygon(4096)
        lo, hi = poly.min(axis=0) - clearance, poly.max(axis=0) + clearance
        cand = np.nonzero(np.all((nodes >= lo) & (nodes <= hi), axis=1) & ~remove)[0]
        for i in cand:
            if hole.curve.distance(nodes[i]) < clearance:
                remove[i] = True
    quads = mesh.quads[~np.any(remove[mesh.quads], axis=1)]
    outer = mesh.node_tag == OUTER
    while True:
        directed = _exposed_edges(quads, None, outer)
        deg = {}
        for a, b in directed:
            deg[a] = deg.get(a, 0) + 1
        pinched = {a for a, d in deg.items() if d > 1}
        # a quad with three or more exposed edges is a spur; drop it too
        exposed_per_quad = np.zeros(len(quads), dtype=int)
        eset = set(directed)
        for qi, q in enumerate(quads):
            for k in range(4):
                if (int(q[k]), int(q[(k + 1) % 4])) in eset:
                    exposed_per_quad[qi] += 1
        bad = np.array(
            [any(int(v) in pinched for v in q) for q in quads], dtype=bool
        ) | (exposed_per_quad >= 3)
        if not bad.any():
            break
        quads = quads[~bad]
    used = np.unique(quads)
    newid = np.full(mesh.n_nodes, -1, dtype=np.int64)
    newid[used] = np.arange(len(used))
    trimmed = LinearMixedMesh(
        nodes[used],
        newid[quads],
        np.zeros((0, 3)),
        mesh.node_tag[used],
        mesh.node_t[used],
    )
    loops = [[int(newid[v]) for v in loop[::-1]] for loop in _trace_loops(directed)]
    return trimmed, loops
