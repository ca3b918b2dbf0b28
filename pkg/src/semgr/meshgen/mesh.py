"""Linear mixed quad/triangle mesh with array-based half-facet connectivity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR = -1
OUTER = -2

STRUCTURED = 0
GAP = 1


class MeshError(RuntimeError):
    pass


class NonManifoldError(MeshError):
    pass


def build_ahf(elems: np.ndarray) -> np.ndarray:
    """Sibling half-facets for an element table padded with -1.

    ``elems`` is (ne, 4); triangles leave column 3 at -1.  Returns ``sib``
    (ne, 4) where ``sib[e, k] = 4 * e2 + k2`` names the twin of edge k of
    element e, or -1 on the boundary (and in unused slots).
    """
    elems = np.asarray(elems, dtype=np.int64)
    ne = len(elems)
    nv = np.where(elems[:, 3] < 0, 3, 4)
    sib = np.full((ne, 4), -1, dtype=np.int64)
    owner = {}
    for e in range(ne):
        n = nv[e]
        for k in range(n):
            a, b = int(elems[e, k]), int(elems[e, (k + 1) % n])
            key = (a, b) if a < b else (b, a)
            owner.setdefault(key, []).append(4 * e + k)
    for key, hfs in owner.items():
        if len(hfs) > 2:
            raise NonManifoldError(f"edge {key} has {len(hfs)} incident elements")
        if len(hfs) == 2:
            f, g = hfs
            sib[f // 4, f % 4] = g
            sib[g // 4, g % 4] = f
    return sib


def signed_areas(nodes, elems) -> np.ndarray:
    elems = np.asarray(elems)
    out = np.zeros(len(elems))
    for e, row in enumerate(elems):
        ids = row[row >= 0]
        p = nodes[ids]
        x, y = p[:, 0], p[:, 1]
        out[e] = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return out


def element_angles(pts: np.ndarray) -> np.ndarray:
    """Interior angles in degrees of a ccw polygon (atan2 keeps precision near 180)."""
    a = np.roll(pts, 1, axis=0) - pts
    b = np.roll(pts, -1, axis=0) - pts
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = (a * b).sum(axis=1)
    return np.degrees(np.arctan2(np.abs(cross), dot))


def triangle_angles(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """(T, n) interior angles in degrees of many ccw n-gons (triangles or quads)."""
    p = nodes[tris]
    a = np.roll(p, 1, axis=1) - p
    b = np.roll(p, -1, axis=1) - p
    cross = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    dot = (a * b).sum(axis=2)
    return np.degrees(np.arctan2(np.abs(cross), dot))


@dataclass
class LinearMixedMesh:
    """Linear mesh of counterclockwise quads and triangles.

    ``node_tag`` is INTERIOR, OUTER or a hole index >= 0 for nodes lying
    exactly on that hole's curve at parameter ``node_t``.
    """

    nodes: np.ndarray
    quads: np.ndarray
    tris: np.ndarray
    node_tag: np.ndarray
    node_t: np.ndarray
    sib: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.quads = np.asarray(self.quads, dtype=np.int64).reshape(-1, 4)
        self.tris = np.asarray(self.tris, dtype=np.int64).reshape(-1, 3)
        self.node_tag = np.asarray(self.node_tag, dtype=np.int64)
        self.node_t = np.asarray(self.node_t, dtype=float)
        if self.sib is None:
            self.sib = build_ahf(self.elements)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_quads(self) -> int:
        return len(self.quads)

    @property
    def n_elements(self) -> int:
        return len(self.quads) + len(self.tris)

    @property
    def elements(self) -> np.ndarray:
        """(ne, 4) padded table: quads first, then triangles."""
        pad = np.full((len(self.tris), 1), -1, dtype=np.int64)
        return np.vstack([self.quads, np.hstack([self.tris, pad])])

    def region(self) -> np.ndarray:
        return np.r_[np.full(self.n_quads, STRUCTURED), np.full(len(self.tris), GAP)]

    def element_nodes(self, e: int) -> np.ndarray:
        if e < self.n_quads:
            return self.quads[e]
        return self.tris[e - self.n_quads]

    def boundary_facets(self):
        """Yield (element, local edge, a, b) for every half-facet without a twin."""
        elems = self.elements
        for e in range(len(elems)):
            n = 4 if elems[e, 3] >= 0 else 3
            for k in range(n):
                if self.sib[e, k] < 0:
                    yield e, k, int(elems[e, k]), int(elems[e, (k + 1) % n])

    def is_curved_facet(self, a: int, b: int) -> bool:
        ta, tb = self.node_tag[a], self.node_tag[b]
        return ta >= 0 and ta == tb

    def curved_facets(self) -> np.ndarray:
        """(m, 2) array of (element, local edge) on a hole curve."""
        out = [
            (e, k)
            for e, k, a, b in self.boundary_facets()
            if self.is_curved_facet(a, b)
        ]
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    def areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.elements)

    def angles(self) -> np.ndarray:
        """All interior angles in degrees (quads then triangles, flattened)."""
        return np.concatenate(
            [triangle_angles(self.nodes, self.quads).ravel(), triangle_angles(self.nodes, self.tris).ravel()]
        )

    def max_angle(self) -> float:
        return float(self.angles().max())

    def min_angle(self) -> float:
        return float(self.angles().min())

    def copy(self) -> "LinearMixedMesh":
        return LinearMixedMesh(
            self.nodes.copy(),
            self.quads.copy(),
            self.tris.copy(),
            self.node_tag.copy(),
            self.node_t.copy(),
            self.sib.copy(),
        )
