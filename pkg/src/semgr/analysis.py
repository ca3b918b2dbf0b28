"""Manufactured solutions, nodal error norms, convergence rates and reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .meshgen.mesh import INTERIOR, LinearMixedMesh, triangle_angles
from .sem import BCSpec, PDECoefficients, paper_velocity

OMEGA_PAPER = 10.0


@dataclass(frozen=True)
class ManufacturedCase:
    """u = sin(w pi x) cos(w pi y) + x y with velocity v = (x, -y)."""

    omega: float = OMEGA_PAPER

    def u(self, x, y):
        a = self.omega * math.pi
        return np.sin(a * x) * np.cos(a * y) + x * y

    def grad(self, x, y):
        a = self.omega * math.pi
        ux = a * np.cos(a * x) * np.cos(a * y) + y
        uy = -a * np.sin(a * x) * np.sin(a * y) + x
        return ux, uy

    def source(self, x, y):
        """-lap(u) + v.grad(u); the xy part is harmonic and drops out of -lap."""
        a = self.omega * math.pi
        lap = -2.0 * a * a * np.sin(a * x) * np.cos(a * y)
        ux, uy = self.grad(x, y)
        vx, vy = paper_velocity(x, y)
        return -lap + vx * ux + vy * uy

    def flux(self, x, y, nx, ny):
        ux, uy = self.grad(x, y)
        return ux * nx + uy * ny

    def coefficients(self) -> PDECoefficients:
        return PDECoefficients(paper_velocity, self.source)

    def bcs(self, normal: str = "exact") -> BCSpec:
        return BCSpec(self.u, self.flux, normal)


@dataclass(frozen=True)
class LinearCase:
    """Patch test u = x + y: the source is v . grad u = x - y."""

    omega: float = 0.0

    def u(self, x, y):
        return np.asarray(x, float) + np.asarray(y, float)

    def grad(self, x, y):
        return np.ones_like(np.asarray(x, float)), np.ones_like(np.asarray(y, float))

    def source(self, x, y):
        vx, vy = paper_velocity(x, y)
        return vx + vy

    def flux(self, x, y, nx, ny):
        return np.asarray(nx, float) + np.asarray(ny, float)

    def coefficients(self) -> PDECoefficients:
        return PDECoefficients(paper_velocity, self.source)

    def bcs(self, normal: str = "exact") -> BCSpec:
        return BCSpec(self.u, self.flux, normal)


SOLUTIONS = {"trig": ManufacturedCase, "linear": LinearCase}


def manufactured_case(kind: str = "trig", omega: float = OMEGA_PAPER):
    try:
        return SOLUTIONS[kind](omega)
    except KeyError:
        raise ValueError(f"unknown manufactured solution {kind!r}") from None


def exact_solution(omega: float, point):
    x, y = point
    case = ManufacturedCase(omega)
    return case.u(x, y), np.array(case.grad(x, y))


def derived_source(omega: float, point) -> float:
    x, y = point
    return ManufacturedCase(omega).source(x, y)


def l2_nodal_error(values, exact, subset=None) -> float:
    """sqrt(sum (u_i - uhat_i)^2) over ``subset`` (mask or index array)."""
    e = np.asarray(values, float) - np.asarray(exact, float)
    if subset is not None:
        e = e[subset]
    if e.size == 0:
        raise ValueError("empty node subset")
    return float(np.sqrt(np.sum(e * e)))


def rms_nodal_error(values, exact, subset=None) -> float:
    """l2 nodal error divided by sqrt(node count)."""
    e = np.asarray(values, float) - np.asarray(exact, float)
    if subset is not None:
        e = e[subset]
    if e.size == 0:
        raise ValueError("empty node subset")
    return float(np.sqrt(np.mean(e * e)))


def convergence_rate(e_coarse, e_fine, dof_coarse, dof_fine, d: int = 2) -> float:
    """-log(e_f / e_c) / log((dof_f / dof_c) ** (1/d))."""
    if e_coarse <= 0 or e_fine <= 0:
        raise ValueError("errors must be positive")
    if dof_coarse == dof_fine:
        raise ValueError("dof counts must differ")
    return -math.log(e_fine / e_coarse) / math.log((dof_fine / dof_coarse) ** (1.0 / d))


def fitted_rate(errors, dofs, d: int = 2) -> float:
    """Least-squares slope of -log(error) against log(dof^(1/d))."""
    x = np.log(np.asarray(dofs, float)) / d
    y = -np.log(np.asarray(errors, float))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------- distortion


class DistortionError(RuntimeError):
    pass


def _star_points(nodes, tris, star, v, pos):
    sub = tris[star]
    pts = nodes[sub]
    pts[sub == v] = pos
    return pts


def _star_max_angle(nodes, tris, star, v, pos):
    pts = _star_points(nodes, tris, star, v, pos)
    return float(triangle_angles(pts.reshape(-1, 2), np.arange(pts.shape[0] * 3).reshape(-1, 3)).max())


def _star_min_area(nodes, tris, star, v, pos):
    p = _star_points(nodes, tris, star, v, pos)
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return float((0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])).min())


def _exit_length(nodes, tris, star, v, d, span):
    """Largest s with all star triangles positive for v + s d (bisection)."""
    lo, hi = 0.0, span
    if _star_min_area(nodes, tris, star, v, nodes[v] + hi * d) > 0.0:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _star_min_area(nodes, tris, star, v, nodes[v] + mid * d) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * span:
            break
    return lo


def _candidates(mesh: LinearMixedMesh):
    """Interior gap-triangle nodes away from quads and curved triangles."""
    bad = np.zeros(mesh.n_nodes, dtype=bool)
    bad[mesh.quads.ravel()] = True
    bad[mesh.node_tag != INTERIOR] = True
    on_curve = mesh.node_tag >= 0
    for tri in mesh.tris:
        if on_curve[tri].sum() >= 2:
            bad[tri] = True
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.tris.ravel()] = True
    return np.nonzero(used & ~bad)[0]


def distort_mesh(mesh: LinearMixedMesh, theta: float, count: int = 1, tol: float = 0.01) -> LinearMixedMesh:
    """Move ``count`` gap-triangle nodes so the worst angle becomes ``theta``.

    Each moved node slides along the extension of one incident edge until
    an element of its star reaches ``theta`` degrees.  The node and edge are
    picked by a scan for the largest angle growth per unit displacement;
    later nodes avoid the stars of earlier ones.
    """
    if not 90.0 < theta < 180.0:
        raise ValueError("target angle must lie in (90, 180) degrees")
    current = mesh.max_angle()
    if abs(current - theta) <= tol:
        return mesh.copy()
    if theta < current:
        raise DistortionError(f"mesh already has max angle {current:.4f} > {theta}")
    out = mesh.copy()
    nodes, tris = out.nodes, out.tris
    stars = [[] for _ in range(out.n_nodes)]
    for t, tri in enumerate(tris):
        for v in tri:
            stars[v].append(t)
    blocked = np.zeros(out.n_nodes, dtype=bool)
    for _ in range(count):
        best = None
        for v in _candidates(out):
            if blocked[v]:
                continue
            star = stars[v]
            base = _star_max_angle(nodes, tris, star, v, nodes[v])
            for w in set(tris[star].ravel()) - {v}:
                edge = nodes[v] - nodes[w]
                length = np.linalg.norm(edge)
                d = edge / length
                step = 1e-3 * length
                if _star_min_area(nodes, tris, star, v, nodes[v] + step * d) <= 0.0:
                    continue
                growth = (_star_max_angle(nodes, tris, star, v, nodes[v] + step * d) - base) / step
                if best is None or growth > best[0]:
                    best = (growth, v, d, length)
        if best is None:
            raise DistortionError("no movable gap-triangle node")
        _, v, d, length = best
        star = stars[v]
        s_max = _exit_length(nodes, tris, star, v, d, 4.0 * length)
        f = lambda s: _star_max_angle(nodes, tris, star, v, nodes[v] + s * d) - theta
        if f(s_max) < 0.0:
            raise DistortionError(f"angle {theta} unattainable at node {v} without inversion")
        lo, hi = 0.0, s_max
        # near 180 degrees the tolerance must shrink with the angle deficit
        aim = min(0.25 * tol, 0.01 * (180.0 - theta))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            val = f(mid)
            if abs(val) <= aim:
                lo = hi = mid
                break
            if val < 0.0:
                lo = mid
            else:
                hi = mid
        nodes[v] = nodes[v] + 0.5 * (lo + hi) * d
        for t in star:
            blocked[tris[t]] = True
    if np.any(out.areas() <= 0.0):
        raise DistortionError("distortion inverted an element")
    got = out.max_angle()
    if abs(got - theta) > tol:
        raise DistortionError(f"reached max angle {got:.5f}, wanted {theta}")
    return out


# ------------------------------------------------------------------- reports

CSV_COLUMNS = (
    "run_id", "domain", "p", "q", "gr_mode", "layers", "dof", "l2_all", "l2_interior",
    "l2_post", "rate_all", "rate_interior", "rate_post", "max_angle_deg", "wall_time_s",
)


@dataclass
class RunRecord:
    """One solve. ``resolution`` is the grid size h; ``status`` is ``ok`` or
    the failure message.  Errors are NaN when not computed."""

    run_id: str
    domain: str
    p: int
    q: int
    gr_mode: str
    layers: int
    resolution: float
    dof: int = 0
    l2_all: float = math.nan
    l2_interior: float = math.nan
    l2_post: float = math.nan
    max_angle_deg: float = math.nan
    wall_time_s: float = 0.0
    omega: float = OMEGA_PAPER
    family: str = "gl"
    post: bool = False
    distortion: float = math.nan
    status: str = "ok"
    rate_all: float = math.nan
    rate_interior: float = math.nan
    rate_post: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def series_key(self):
        return (self.domain, self.family, self.p, self.q, self.gr_mode, self.layers,
                self.post, self.omega, _nan_key(self.distortion))


def _nan_key(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class ConvergenceReport:
    records: list

    def compute_rates(self) -> "ConvergenceReport":
        """Fill rate_* between consecutive resolutions of each series.

        Only runs that differ solely in resolution share a series."""
        groups = {}
        for r in self.records:
            groups.setdefault(r.series_key(), []).append(r)
        for runs in groups.values():
            runs = sorted((r for r in runs if r.ok), key=lambda r: r.dof)
            for prev, cur in zip(runs, runs[1:]):
                for name in ("all", "interior", "post"):
                    ec, ef = getattr(prev, f"l2_{name}"), getattr(cur, f"l2_{name}")
                    if ec > 0 and ef > 0 and prev.dof != cur.dof:
                        setattr(cur, f"rate_{name}", convergence_rate(ec, ef, prev.dof, cur.dof))
        return self

    def series(self):
        """{label: [(dof, error), ...]} in the layout of the convergence figures."""
        out = {}
        for r in sorted(self.records, key=lambda r: (r.series_key().__repr__(), r.dof)):
            if not r.ok:
                continue
            base = f"{r.domain} p={r.p} q={r.q} gr={r.gr_mode}"
            if _nan_key(r.distortion) is not None:
                base += f" angle={r.distortion:g}"
            out.setdefault(base, []).append((r.dof, r.l2_all))
            if not math.isnan(r.l2_interior):
                out.setdefault(base + " interior", []).append((r.dof, r.l2_interior))
            if r.post and not math.isnan(r.l2_post):
                out.setdefault(base + " post", []).append((r.dof, r.l2_post))
        return out


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def emit_report(records, out_dir, stem: str = "report") -> dict:
    """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>_plot.csv``.

    Output is a pure function of the records, so identical inputs give
    byte-identical files.  Returns the written paths.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    rep = ConvergenceReport(records).compute_rates()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "plot": out / f"{stem}_plot.csv"}

    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS + ("status",))
    for r in records:
        wr.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS] + [r.status])
    paths["csv"].write_text(buf.getvalue())

    payload = [_jsonable(asdict(r)) for r in records]
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(("dof", "error", "series"))
    for label, pts in rep.series().items():
        for dof, err in pts:
            wr.writerow((dof, _fmt(float(err)), label))
    paths["plot"].write_text(buf.getvalue())
    return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if math.isnan(x) or math.isinf(x) else x
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj
