"""Plain-text mesh and solution files.

Layout (one record per line, ``#`` starts a comment)::

    semgr-mesh 1
    domain {json}
    nodes N
    id x y tag t                      (N lines; tag -1 interior, -2 outer, >=0 hole)
    quads NQ
    quad i j k l
    tris NT
    tri i j k
    highorder p q family              (optional from here on)
    honodes M
    id x y hole outer t
    quadconn NQ n
    e i0 i1 ...
    triconn NT n
    t i0 i1 ...
    trigeom NC n
    t edge hole x0 y0 x1 y1 ...
    end

Reals are written with 17 significant digits so a round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Domain
from .highorder import HighOrderMesh
from .meshgen.mesh import LinearMixedMesh

MAGIC = "semgr-mesh 1"


class MeshFileError(ValueError):
    pass


def _r(x) -> str:
    return format(float(x), ".17g")


def format_mesh(mesh: LinearMixedMesh, domain: Domain | None = None, ho: HighOrderMesh | None = None) -> str:
    out = [MAGIC]
    if domain is not None:
        out.append("domain " + json.dumps(domain.to_dict(), sort_keys=True))
    out.append(f"nodes {mesh.n_nodes}")
    for i, (x, t, tag) in enumerate(zip(mesh.nodes, mesh.node_t, mesh.node_tag)):
        out.append(f"{i} {_r(x[0])} {_r(x[1])} {int(tag)} {_r(t)}")
    out.append(f"quads {mesh.n_quads}")
    out.extend("quad " + " ".join(map(str, q)) for q in mesh.quads)
    out.append(f"tris {len(mesh.tris)}")
    out.extend("tri " + " ".join(map(str, t)) for t in mesh.tris)
    if ho is not None:
        out.append(f"highorder {ho.p} {ho.q} {ho.family}")
        out.append(f"honodes {ho.n_nodes}")
        for i in range(ho.n_nodes):
            x = ho.nodes[i]
            out.append(
                f"{i} {_r(x[0])} {_r(x[1])} {int(ho.node_hole[i])} {int(ho.node_outer[i])} {_r(ho.node_t[i])}"
            )
        out.append(f"quadconn {ho.n_quads} {ho.quad_conn.shape[1]}")
        out.extend(f"{e} " + " ".join(map(str, r)) for e, r in enumerate(ho.quad_conn))
        out.append(f"triconn {len(ho.tri_conn)} {ho.tri_conn.shape[1] if len(ho.tri_conn) else 0}")
        out.extend(f"{e} " + " ".join(map(str, r)) for e, r in enumerate(ho.tri_conn))
        n_geo = len(next(iter(ho.tri_geom.values()))) if ho.tri_geom else 0
        out.append(f"trigeom {len(ho.tri_geom)} {n_geo}")
        for t in sorted(ho.tri_geom):
            k, hid = ho.curved_edge[t]
            coords = " ".join(_r(v) for v in ho.tri_geom[t].ravel())
            out.append(f"{t} {k} {hid} {coords}")
    out.append("end")
    return "\n".join(out) + "\n"


def write_mesh(path, mesh, domain=None, ho=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_mesh(mesh, domain, ho))
    return path


class _Lines:
    def __init__(self, text):
        self.lines = [ln for ln in (l.split("#", 1)[0].strip() for l in text.splitlines()) if ln]
        self.i = 0

    def next(self):
        if self.i >= len(self.lines):
            raise MeshFileError("unexpected end of mesh file")
        self.i += 1
        return self.lines[self.i - 1]

    def peek(self):
        return self.lines[self.i] if self.i < len(self.lines) else None

    def header(self, key, n):
        parts = self.next().split()
        if parts[0] != key or len(parts) != n + 1:
            raise MeshFileError(f"expected '{key}' header, got {' '.join(parts)!r}")
        return parts[1:]


def parse_mesh(text: str):
    """Returns ``(linear mesh, domain or None, high-order mesh or None)``."""
    ln = _Lines(text)
    if ln.next() != MAGIC:
        raise MeshFileError("not a semgr mesh file")
    domain = None
    if ln.peek() and ln.peek().startswith("domain "):
        domain = Domain.from_dict(json.loads(ln.next()[len("domain "):]))
    try:
        (n,) = map(int, ln.header("nodes", 1))
        rows = [ln.next().split() for _ in range(n)]
        nodes = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
        tag = np.array([int(r[3]) for r in rows], dtype=np.int64)
        t = np.array([float(r[4]) for r in rows])
        (nq,) = map(int, ln.header("quads", 1))
        quads = np.array([_ints(ln.next(), "quad", 4) for _ in range(nq)], dtype=np.int64).reshape(-1, 4)
        (nt,) = map(int, ln.header("tris", 1))
        tris = np.array([_ints(ln.next(), "tri", 3) for _ in range(nt)], dtype=np.int64).reshape(-1, 3)
    except (ValueError, IndexError) as exc:
        raise MeshFileError(f"malformed linear mesh block: {exc}") from exc
    mesh = LinearMixedMesh(nodes, quads, tris, tag, t)
    ho = None
    if ln.peek() and ln.peek().startswith("highorder"):
        try:
            ho = _parse_high_order(ln, mesh)
        except (ValueError, IndexError) as exc:
            raise MeshFileError(f"malformed high-order block: {exc}") from exc
    if ln.next() != "end":
        raise MeshFileError("missing 'end' marker")
    return mesh, domain, ho


def _ints(line, key, n):
    parts = line.split()
    if parts[0] != key or len(parts) != n + 1:
        raise MeshFileError(f"bad {key} record {line!r}")
    return [int(v) for v in parts[1:]]


def _parse_high_order(ln, mesh):
    p, q, family = ln.header("highorder", 3)
    (m,) = map(int, ln.header("honodes", 1))
    rows = [ln.next().split() for _ in range(m)]
    nodes = np.array([[float(r[1]), float(r[2])] for r in rows]).reshape(-1, 2)
    hole = np.array([int(r[3]) for r in rows], dtype=np.int64)
    outer = np.array([bool(int(r[4])) for r in rows])
    t = np.array([float(r[5]) for r in rows])
    nq, kq = map(int, ln.header("quadconn", 2))
    qc = np.array([[int(v) for v in ln.next().split()[1:]] for _ in range(nq)], dtype=np.int64).reshape(nq, kq)
    nt, kt = map(int, ln.header("triconn", 2))
    tc = np.array([[int(v) for v in ln.next().split()[1:]] for _ in range(nt)], dtype=np.int64).reshape(nt, kt)
    nc, kg = map(int, ln.header("trigeom", 2))
    geom, edge = {}, {}
    for _ in range(nc):
        parts = ln.next().split()
        e, k, hid = int(parts[0]), int(parts[1]), int(parts[2])
        geom[e] = np.array([float(v) for v in parts[3:]]).reshape(kg, 2)
        edge[e] = (k, hid)
    return HighOrderMesh(mesh, int(p), int(q), family, nodes, qc, tc, geom, edge, hole, outer, t)


def read_mesh(path):
    path = Path(path)
    return parse_mesh(path.read_text())


def write_solution(path, values) -> Path:
    """``node_id value`` lines with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{i} {_r(v)}\n" for i, v in enumerate(np.asarray(values, float))))
    return path


def read_solution(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    ids = np.array([int(r[0]) for r in rows])
    if not np.array_equal(ids, np.arange(len(ids))):
        raise MeshFileError("solution node ids must be 0..n-1 in order")
    return np.array([float(r[1]) for r in rows])
