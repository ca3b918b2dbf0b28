"""Run configuration: INI-style file, environment overrides, validation.

Every key can be overridden from the environment as
``SEMGR_<SECTION>_<KEY>`` (upper case), e.g. ``SEMGR_MESH_H=0.03125``.
Command-line flags override both.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from io import StringIO

from .geometry import (
    DIRICHLET,
    NEUMANN,
    Circle,
    Domain,
    Hole,
    ellipse_domain,
    flower_domain,
    square_domain,
)
from .meshgen import GR_MODES
from .reference import EQUI, GL

ENV_PREFIX = "SEMGR_"
DOMAINS = ("flower", "ellipse", "square", "circle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # [domain]
    domain: str = "flower"
    hole_bc: str = NEUMANN
    # [mesh]
    h: float = 1.0 / 16
    resolutions: tuple = ()
    gr_mode: str = "h"
    theta_max: float = 0.2
    h_min: float | None = None
    h_max: float | None = None
    clearance: float = 1.5
    # [discretization]
    degree: int = 3
    degrees: tuple = ()
    geom_degree: int | None = None
    gr_modes: tuple = ()
    family: str = GL
    strict_geometry: bool = True
    # [problem]
    omega: float = 10.0
    solution: str = "trig"
    # [solver]
    tol: float = 1e-12
    method: str = "direct"
    # [post]
    post: bool = False
    layers: int = 2
    post_normal: str = "facet"
    # [quality]
    angles: tuple = ()
    distort_count: int = 3
    # [output]
    out: str = "out"
    deterministic: bool = True
    jobs: int = 0

    def q_for(self, p: int, gr_mode: str) -> int:
        """Geometry degree: explicit value, else p+1 for hp and p otherwise."""
        if self.geom_degree is not None:
            return self.geom_degree
        return p + 1 if gr_mode == "hp" else p

    def study_degrees(self):
        return self.degrees or (self.degree,)

    def study_gr_modes(self):
        return self.gr_modes or (self.gr_mode,)

    def make_domain(self) -> Domain:
        bc = self.hole_bc
        if self.domain == "flower":
            return flower_domain(bc)
        if self.domain == "ellipse":
            return ellipse_domain(bc)
        if self.domain == "circle":
            return Domain([Hole(Circle(radius=0.2, center=(0.5, 0.5)), bc)])
        return square_domain()

    def validate(self) -> "RunConfig":
        err = []
        if self.domain not in DOMAINS:
            err.append(f"domain must be one of {DOMAINS}")
        if self.hole_bc not in (NEUMANN, DIRICHLET):
            err.append("hole_bc must be neumann or dirichlet")
        if not self.h > 0:
            err.append("h must be positive")
        if any(not r > 0 for r in self.resolutions):
            err.append("resolutions must be positive")
        for g in (self.gr_mode, *self.gr_modes):
            if g not in GR_MODES:
                err.append(f"gr mode {g!r} not in {GR_MODES}")
        for p in (self.degree, *self.degrees):
            if not 1 <= p <= 8:
                err.append(f"degree {p} outside 1..8")
        if self.geom_degree is not None:
            for p in self.study_degrees():
                if self.geom_degree < p:
                    err.append(f"geometry degree {self.geom_degree} < solution degree {p}")
                if self.geom_degree > p + 2:
                    err.append(f"geometry degree {self.geom_degree} > degree + 2 for p={p}")
        if self.family not in (GL, EQUI):
            err.append("family must be gl or equi")
        if not self.theta_max > 0:
            err.append("theta_max must be positive")
        if self.h_min is not None and self.h_max is not None and self.h_min > self.h_max:
            err.append("h_min exceeds h_max")
        if not self.clearance > 0:
            err.append("clearance must be positive")
        if self.solution not in ("trig", "linear"):
            err.append("solution must be trig or linear")
        if not self.omega > 0:
            err.append("omega must be positive")
        if not 0 < self.tol < 1:
            err.append("tol must lie in (0, 1)")
        if self.method not in ("direct", "gmres"):
            err.append("method must be direct or gmres")
        if self.post and self.layers < 1:
            err.append("layers must be >= 1 when post-processing is on")
        if self.post_normal not in ("facet", "exact"):
            err.append("post_normal must be facet or exact")
        for a in self.angles:
            if not 90.0 < a < 180.0:
                err.append(f"distortion angle {a} outside (90, 180)")
        if self.distort_count < 1:
            err.append("distort_count must be >= 1")
        if self.jobs < 0:
            err.append("jobs must be >= 0")
        if err:
            raise ConfigError("; ".join(err))
        return self


# (section, key) for each field
_SECTIONS = {
    "domain": ("domain", "kind"),
    "hole_bc": ("domain", "hole_bc"),
    "h": ("mesh", "h"),
    "resolutions": ("mesh", "resolutions"),
    "gr_mode": ("mesh", "gr_mode"),
    "theta_max": ("mesh", "theta_max"),
    "h_min": ("mesh", "h_min"),
    "h_max": ("mesh", "h_max"),
    "clearance": ("mesh", "clearance"),
    "degree": ("discretization", "degree"),
    "degrees": ("discretization", "degrees"),
    "geom_degree": ("discretization", "geom_degree"),
    "gr_modes": ("discretization", "gr_modes"),
    "family": ("discretization", "family"),
    "strict_geometry": ("discretization", "strict_geometry"),
    "omega": ("problem", "omega"),
    "solution": ("problem", "solution"),
    "tol": ("solver", "tol"),
    "method": ("solver", "method"),
    "post": ("post", "enabled"),
    "layers": ("post", "layers"),
    "post_normal": ("post", "normal"),
    "angles": ("quality", "angles"),
    "distort_count": ("quality", "count"),
    "out": ("output", "dir"),
    "deterministic": ("output", "deterministic"),
    "jobs": ("output", "jobs"),
}


def _number(text: str) -> float:
    """Float or exact fraction such as ``1/16``."""
    text = text.strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError as exc:
        raise ConfigError(f"not an integer: {text!r}") from exc


def _items(text: str):
    return [s for s in (x.strip() for x in text.replace(";", ",").split(",")) if s]


_PARSERS = {
    "h": _number,
    "theta_max": _number,
    "h_min": lambda s: None if s.strip().lower() in ("", "none", "auto") else _number(s),
    "h_max": lambda s: None if s.strip().lower() in ("", "none", "auto") else _number(s),
    "clearance": _number,
    "omega": _number,
    "tol": _number,
    "degree": _int,
    "layers": _int,
    "distort_count": _int,
    "jobs": _int,
    "geom_degree": lambda s: None if s.strip().lower() in ("", "none", "auto") else _int(s),
    "resolutions": lambda s: tuple(_number(x) for x in _items(s)),
    "degrees": lambda s: tuple(_int(x) for x in _items(s)),
    "gr_modes": lambda s: tuple(x.lower() for x in _items(s)),
    "angles": lambda s: tuple(_number(x) for x in _items(s)),
    "strict_geometry": _bool,
    "post": _bool,
    "deterministic": _bool,
}


def _parse_value(name: str, text: str):
    parser = _PARSERS.get(name)
    return parser(text) if parser else text.strip().lower() if name != "out" else text.strip()


def load_config(path=None, env=None, overrides=None) -> RunConfig:
    """Defaults, then the file, then ``SEMGR_*`` variables, then ``overrides``."""
    values = {}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        known = {}
        for name, (sec, key) in _SECTIONS.items():
            known.setdefault(sec, {})[key] = name
        for sec in cp.sections():
            if sec not in known:
                raise ConfigError(f"unknown section [{sec}]")
            for key, text in cp.items(sec):
                if key not in known[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                values[known[sec][key]] = _parse_value(known[sec][key], text)
    env = os.environ if env is None else env
    for name, (sec, key) in _SECTIONS.items():
        var = f"{ENV_PREFIX}{sec}_{key}".upper()
        if var in env:
            values[name] = _parse_value(name, env[var])
    for name, val in (overrides or {}).items():
        if val is not None:
            values[name] = val
    names = {f.name for f in fields(RunConfig)}
    bad = set(values) - names
    if bad:
        raise ConfigError(f"unknown settings {sorted(bad)}")
    return RunConfig(**values).validate()


def dump_config(cfg: RunConfig) -> str:
    """INI text that reloads to ``cfg``."""
    cp = configparser.ConfigParser()
    for name, (sec, key) in _SECTIONS.items():
        if not cp.has_section(sec):
            cp.add_section(sec)
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            text = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif v is None:
            text = "auto"
        elif isinstance(v, float):
            text = repr(v)
        else:
            text = str(v)
        cp.set(sec, key, text)
    buf = StringIO()
    cp.write(buf)
    return buf.getvalue()


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None}).validate()
