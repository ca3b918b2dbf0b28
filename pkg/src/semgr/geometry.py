"""Exact parametric boundary curves and the computational domain.

All closed curves are parametrized counterclockwise on [0, 2*pi).  Normals
point out of the computational domain, which for a hole is into the hole,
i.e. to the left of the counterclockwise tangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

TWO_PI = 2.0 * math.pi
DIRICHLET = "dirichlet"
NEUMANN = "neumann"

INSIDE, AMBIGUOUS, OUTSIDE = 1, 0, -1


class GeometryError(RuntimeError):
    pass


class DegenerateTangentError(GeometryError):
    pass


class ProjectionError(GeometryError):
    pass


@dataclass(frozen=True)
class ParametricCurve:
    """Base class; subclasses supply the position and two derivatives."""

    center: tuple[float, float] = (0.5, 0.5)

    kind = "abstract"

    def derivatives(self, t):
        """Return (c, c', c'') each shaped (..., 2)."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    # -- queries -------------------------------------------------------

    def eval(self, t):
        return self.derivatives(t)[0]

    def tangent(self, t):
        return self.derivatives(t)[1]

    def curvature(self, t):
        """Unsigned curvature |x'y'' - y'x''| / |c'|^3."""
        _, d1, d2 = self.derivatives(t)
        speed = np.hypot(d1[..., 0], d1[..., 1])
        if np.any(speed < 1e-13):
            raise DegenerateTangentError("tangent vanishes")
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return np.abs(cross) / speed**3

    def signed_curvature(self, t):
        _, d1, d2 = self.derivatives(t)
        speed = np.hypot(d1[..., 0], d1[..., 1])
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / speed**3

    def normal(self, t):
        """Unit normal pointing into the hole (left of the ccw tangent)."""
        d1 = self.tangent(t)
        speed = np.hypot(d1[..., 0], d1[..., 1])
        if np.any(speed < 1e-13):
            raise DegenerateTangentError("tangent vanishes")
        return np.stack([-d1[..., 1], d1[..., 0]], axis=-1) / speed[..., None]

    def area(self) -> float:
        """Enclosed area by Green's theorem on a fine trapezoid rule."""
        t = np.linspace(0.0, TWO_PI, 8192, endpoint=False)
        c, d1, _ = self.derivatives(t)
        integrand = c[:, 0] * d1[:, 1] - c[:, 1] * d1[:, 0]
        return 0.5 * integrand.mean() * TWO_PI

    def polygon(self, n: int = 4096) -> np.ndarray:
        t = np.linspace(0.0, TWO_PI, n, endpoint=False)
        return self.eval(t)

    def closest_point(
        self, p, t0: float | None = None, max_iter: int = 50, interval=None
    ) -> float:
        """Parameter of the point on the curve nearest to ``p``.

        A 64-sample scan picks the branch (``t0`` competes as a candidate),
        then safeguarded Newton on d/dt |p - c(t)|^2 / 2 converges inside a
        bracket one scan interval wide on each side.  With ``interval=(lo,
        hi)`` (``lo < hi``, unwrapped) the search is confined to that arc and
        the result is returned unwrapped inside it.
        """
        p = np.asarray(p, dtype=float)
        if interval is None:
            ts = np.linspace(0.0, TWO_PI, 64, endpoint=False)
            width = TWO_PI / 64
            bounds = (-np.inf, np.inf)
        else:
            a, b = float(interval[0]), float(interval[1])
            ts = np.linspace(a, b, 65)
            width = (b - a) / 64
            bounds = (a, b)
        if t0 is not None:
            ts = np.append(ts, float(t0) if interval is not None else float(t0) % TWO_PI)
        d = np.sum((self.eval(ts) - p) ** 2, axis=1)
        tc = ts[int(np.argmin(d))]
        lo, hi = max(tc - width, bounds[0]), min(tc + width, bounds[1])

        def g(t):
            c, d1, d2 = self.derivatives(t)
            r = c - p
            return r @ d1, d1 @ d1 + r @ d2, math.sqrt(d1 @ d1)

        glo, ghi = g(lo)[0], g(hi)[0]
        bracketed = glo < 0.0 < ghi
        if interval is not None and not bracketed:
            # minimum sits on an end of the arc
            return lo if glo >= 0.0 else hi
        if interval is None and not bracketed:
            return self._bounded_min(p, lo, hi) % TWO_PI
        t = tc
        scale = max(float(np.linalg.norm(p - self.eval(tc))), 1.0)
        wrap = (lambda s: s % TWO_PI) if interval is None else (lambda s: s)
        for _ in range(max_iter):
            gv, dg, speed = g(t)
            if abs(gv) <= 1e-13 * speed * scale:
                return wrap(t)
            if bracketed:
                if gv < 0.0:
                    lo = t
                else:
                    hi = t
            step = -gv / dg if dg > 0.0 else None
            tn = None if step is None else t + step
            if bracketed and (tn is None or not lo < tn < hi):
                tn = 0.5 * (lo + hi)
            elif tn is None:
                return wrap(self._bounded_min(p, lo, hi))
            if abs(tn - t) < 1e-16 * max(1.0, abs(t)):
                return wrap(tn)
            t = tn
        raise ProjectionError(f"closest_point did not converge for p={p.tolist()}")

    def _bounded_min(self, p, lo, hi) -> float:
        res = minimize_scalar(
            lambda t: float(np.sum((self.eval(t) - p) ** 2)),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-15 * max(1.0, abs(hi))},
        )
        return float(res.x)

    def closest_points(self, pts, lo, hi, max_iter: int = 60) -> np.ndarray:
        """Vectorized closest point for many points, each confined to its own
        short arc ``[lo_i, hi_i]``; results are unwrapped inside the arc."""
        p = np.atleast_2d(np.asarray(pts, float))
        lo = np.broadcast_to(np.asarray(lo, float), len(p)).copy()
        hi = np.broadcast_to(np.asarray(hi, float), len(p)).copy()

        def g(t):
            c, d1, d2 = self.derivatives(t)
            r = c - p
            return (r * d1).sum(1), (d1 * d1).sum(1) + (r * d2).sum(1), np.sqrt((d1 * d1).sum(1))

        glo, ghi = g(lo)[0], g(hi)[0]
        out = np.where(glo >= 0.0, lo, hi)
        active = (glo < 0.0) & (ghi > 0.0)
        t = 0.5 * (lo + hi)
        scale = np.maximum(np.linalg.norm(p - self.eval(t), axis=1), 1.0)
        for _ in range(max_iter):
            if not active.any():
                return out
            gv, dg, speed = g(t)
            done = active & ((np.abs(gv) <= 1e-13 * speed * scale) | (hi - lo <= 1e-15 * np.maximum(1.0, np.abs(t))))
            out[done] = t[done]
            active &= ~done
            neg = gv < 0.0
            lo = np.where(active & neg, t, lo)
            hi = np.where(active & ~neg, t, hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                tn = t - gv / dg
            bad = ~(dg > 0.0) | ~(tn > lo) | ~(tn < hi)
            tn = np.where(bad, 0.5 * (lo + hi), tn)
            t = np.where(active, tn, t)
        if active.any():
            raise ProjectionError(f"closest_points did not converge for {int(active.sum())} points")
        return out

    def distance(self, p, t0=None) -> float:
        t = self.closest_point(p, t0)
        return float(np.linalg.norm(np.asarray(p, float) - self.eval(t)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}


@dataclass(frozen=True)
class Circle(ParametricCurve):
    radius: float = 1.0
    kind = "circle"

    def derivatives(self, t):
        t = np.asarray(t, float)
        c, s = np.cos(t), np.sin(t)
        r = self.radius
        cx, cy = self.center
        pos = np.stack([cx + r * c, cy + r * s], axis=-1)
        d1 = np.stack([-r * s, r * c], axis=-1)
        d2 = np.stack([-r * c, -r * s], axis=-1)
        return pos, d1, d2

    def params(self):
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ellipse(ParametricCurve):
    a: float = 0.2
    b: float = 0.1
    kind = "ellipse"

    def derivatives(self, t):
        t = np.asarray(t, float)
        c, s = np.cos(t), np.sin(t)
        cx, cy = self.center
        pos = np.stack([cx + self.a * c, cy + self.b * s], axis=-1)
        d1 = np.stack([-self.a * s, self.b * c], axis=-1)
        d2 = np.stack([-self.a * c, -self.b * s], axis=-1)
        return pos, d1, d2

    def area(self):
        return math.pi * self.a * self.b

    def params(self):
        return {"center": list(self.center), "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Flower(ParametricCurve):
    """Polar curve r(t) = (r0 + r1 sin(k t)) / scale around ``center``."""

    r0: float = 0.25
    r1: float = 0.1
    petals: int = 5
    scale: float = 3.0
    kind = "flower"

    def derivatives(self, t):
        t = np.asarray(t, float)
        k = self.petals
        r = (self.r0 + self.r1 * np.sin(k * t)) / self.scale
        dr = self.r1 * k * np.cos(k * t) / self.scale
        ddr = -self.r1 * k * k * np.sin(k * t) / self.scale
        c, s = np.cos(t), np.sin(t)
        cx, cy = self.center
        pos = np.stack([cx + r * c, cy + r * s], axis=-1)
        d1 = np.stack([dr * c - r * s, dr * s + r * c], axis=-1)
        d2 = np.stack(
            [ddr * c - 2 * dr * s - r * c, ddr * s + 2 * dr * c - r * s], axis=-1
        )
        return pos, d1, d2

    def params(self):
        return {
            "center": list(self.center),
            "r0": self.r0,
            "r1": self.r1,
            "petals": self.petals,
            "scale": self.scale,
        }


CURVE_KINDS = {"circle": Circle, "ellipse": Ellipse, "flower": Flower}


def curve_from_dict(d: dict) -> ParametricCurve:
    d = dict(d)
    kind = d.pop("kind")
    if "center" in d:
        d["center"] = tuple(float(v) for v in d["center"])
    try:
        cls = CURVE_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown curve kind {kind!r}") from None
    return cls(**d)


@dataclass(frozen=True)
class Hole:
    curve: ParametricCurve
    bc: str = NEUMANN


@dataclass
class Domain:
    """Unit square (or any axis-aligned box) minus a list of holes.

    The outer boundary always carries Dirichlet data.
    """

    holes: list[Hole] = field(default_factory=list)
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    outer_bc: str = DIRICHLET

    def __post_init__(self):
        for h in self.holes:
            if h.bc not in (DIRICHLET, NEUMANN):
                raise ValueError(f"bad boundary tag {h.bc!r}")
            poly = h.curve.polygon(512)
            x0, y0, x1, y1 = self.bbox
            if not (
                np.all(poly[:, 0] > x0)
                and np.all(poly[:, 0] < x1)
                and np.all(poly[:, 1] > y0)
                and np.all(poly[:, 1] < y1)
            ):
                raise ValueError("hole is not strictly inside the outer boundary")
        self._polys = [h.curve.polygon(4096) for h in self.holes]

    @property
    def curves(self):
        return [h.curve for h in self.holes]

    def area(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return (x1 - x0) * (y1 - y0) - sum(h.curve.area() for h in self.holes)

    def classify(self, pts, tol: float = 1e-9) -> np.ndarray:
        """INSIDE / AMBIGUOUS / OUTSIDE for each point (n, 2)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        x0, y0, x1, y1 = self.bbox
        x, y = pts[:, 0], pts[:, 1]
        out = np.full(len(pts), INSIDE, dtype=np.int8)
        dist_box = np.minimum.reduce([x - x0, x1 - x, y - y0, y1 - y])
        out[dist_box < -tol] = OUTSIDE
        out[np.abs(dist_box) <= tol] = AMBIGUOUS
        for hole, poly in zip(self.holes, self._polys):
            wn = winding_number(poly, pts)
            seg = np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1).max()
            dpoly = _polygon_distance(poly, pts)
            # polygon chords deviate from the curve by far less than a segment
            near = dpoly < seg
            for i in np.nonzero(near & (out != OUTSIDE))[0]:
                t = hole.curve.closest_point(pts[i])
                foot = hole.curve.eval(t)
                off = pts[i] - foot
                dist = float(np.hypot(*off))
                if dist <= tol:
                    out[i] = AMBIGUOUS
                elif off @ hole.curve.normal(t) > 0.0:
                    out[i] = OUTSIDE
            far = ~near
            out[far & (wn != 0)] = OUTSIDE
        return out

    def contains(self, p) -> bool:
        return bool(self.classify(np.asarray(p, float)[None])[0] == INSIDE)

    def to_dict(self) -> dict:
        return {
            "bbox": list(self.bbox),
            "holes": [{"curve": h.curve.to_dict(), "bc": h.bc} for h in self.holes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        holes = [Hole(curve_from_dict(h["curve"]), h.get("bc", NEUMANN)) for h in d.get("holes", [])]
        return cls(holes=holes, bbox=tuple(d.get("bbox", (0.0, 0.0, 1.0, 1.0))))


def winding_number(poly: np.ndarray, pts: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Winding number of closed polygon ``poly`` (m, 2) around each point."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    res = np.zeros(len(pts), dtype=np.int64)
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk, None, :]
        ay, by = a[None, :, 1], b[None, :, 1]
        cross = (b[None, :, 0] - a[None, :, 0]) * (p[..., 1] - ay) - (
            p[..., 0] - a[None, :, 0]
        ) * (by - ay)
        up = (ay <= p[..., 1]) & (by > p[..., 1]) & (cross > 0)
        down = (ay > p[..., 1]) & (by <= p[..., 1]) & (cross < 0)
        res[s : s + chunk] = up.sum(axis=1) - down.sum(axis=1)
    return res


def _polygon_distance(poly, pts, chunk: int = 1024):
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    L2 = np.sum(ab * ab, axis=1)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk, None, :]
        t = np.clip(np.sum((p - a) * ab, axis=-1) / L2, 0.0, 1.0)
        d = p - (a + t[..., None] * ab)
        out[s : s + chunk] = np.sqrt(np.min(np.sum(d * d, axis=-1), axis=1))
    return out


def flower_domain(bc: str = NEUMANN) -> Domain:
    return Domain([Hole(Flower(), bc)])


def ellipse_domain(bc: str = NEUMANN) -> Domain:
    return Domain([Hole(Ellipse(), bc)])


def square_domain() -> Domain:
    return Domain([])
