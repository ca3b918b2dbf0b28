"""Single runs and batch studies shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .aesfem import StencilError, SubmeshError, postprocess
from .analysis import DistortionError, RunRecord, distort_mesh, l2_nodal_error, manufactured_case
from .config import ConfigError, RunConfig
from .fileio import MeshFileError
from .geometry import GeometryError
from .highorder import HighOrderMesh, insert_high_order_nodes
from .meshgen import MeshError, MeshParams, generate_mesh
from .sem import SolveError, solve_field

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MESH = 3
EXIT_SOLVE = 4
EXIT_IO = 5

MESH_ERRORS = (MeshError, GeometryError, DistortionError)
SOLVE_ERRORS = (SolveError, StencilError, SubmeshError, np.linalg.LinAlgError)

# 180 degrees minus 10^-4 ... 10^1
PAPER_ANGLES = (179.9999, 179.999, 179.99, 179.9, 179.0, 170.0)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, MESH_ERRORS):
        return EXIT_MESH
    if isinstance(exc, SOLVE_ERRORS):
        return EXIT_SOLVE
    if isinstance(exc, (OSError, MeshFileError)):
        return EXIT_IO
    return 1


def mesh_params(cfg: RunConfig, h: float, gr_mode: str) -> MeshParams:
    return MeshParams(h, gr_mode, cfg.theta_max, cfg.h_min, cfg.h_max, cfg.clearance)


def build_linear(cfg: RunConfig, h: float, gr_mode: str, domain=None):
    domain = cfg.make_domain() if domain is None else domain
    return generate_mesh(domain, mesh_params(cfg, h, gr_mode))


def lift(cfg: RunConfig, linear, p: int, gr_mode: str, domain) -> HighOrderMesh:
    return insert_high_order_nodes(
        linear, domain, p, cfg.q_for(p, gr_mode), cfg.family, strict_geometry=cfg.strict_geometry
    )


def mesh_summary(ho: HighOrderMesh) -> dict:
    lin = ho.linear
    return {
        "nodes_linear": int(lin.n_nodes),
        "quads": int(lin.n_quads),
        "triangles": int(len(lin.tris)),
        "nodes_high_order": int(ho.n_nodes),
        "p": int(ho.p),
        "q": int(ho.q),
        "curved_triangles": int(len(ho.tri_geom)),
        "min_angle_deg": float(lin.min_angle()),
        "max_angle_deg": float(lin.max_angle()),
        "min_det_j": float(ho.min_jacobian()),
    }


@dataclass(frozen=True)
class RunSpec:
    h: float
    p: int
    gr_mode: str
    post: bool
    distortion: float | None = None

    @property
    def run_id(self) -> str:
        tag = f"h{1.0 / self.h:g}_p{self.p}_{self.gr_mode}"
        if self.post:
            tag += "_post"
        if self.distortion is not None:
            tag += f"_a{self.distortion:g}"
        return tag


@dataclass
class RunOutput:
    record: RunRecord
    mesh: HighOrderMesh | None = None
    values: np.ndarray | None = None
    post_values: np.ndarray | None = None
    exit_code: int = EXIT_OK


def solve_on(cfg: RunConfig, ho: HighOrderMesh, domain, spec: RunSpec, record: RunRecord) -> RunOutput:
    case = manufactured_case(cfg.solution, cfg.omega)
    coeffs, bcs = case.coefficients(), case.bcs()
    sol = solve_field(ho, coeffs, bcs, domain, cfg.tol, cfg.method)
    exact = case.u(ho.nodes[:, 0], ho.nodes[:, 1])
    record.dof = int(ho.n_nodes)
    record.l2_all = l2_nodal_error(sol.values, exact)
    interior = ho.structured_only_nodes()
    record.diagnostics["interior_nodes"] = int(np.count_nonzero(interior))
    if interior.any():
        record.l2_interior = l2_nodal_error(sol.values, exact, interior)
    record.diagnostics["residual"] = float(sol.residual)
    post_vals = None
    if spec.post and domain.holes:
        res = postprocess(ho, domain, sol.values, coeffs, bcs, cfg.layers, normal=cfg.post_normal)
        post_vals = res.values
        record.l2_post = l2_nodal_error(post_vals, exact)
        record.diagnostics["post"] = res.diagnostics
    return RunOutput(record, ho, sol.values, post_vals)


def run_case(cfg: RunConfig, spec: RunSpec, linear=None) -> RunOutput:
    """Mesh, lift, solve and optionally post-process one configuration.

    Failures are captured in the record (``status``) and ``exit_code``.
    """
    start = time.perf_counter()
    domain = cfg.make_domain()
    rec = RunRecord(
        run_id=spec.run_id,
        domain=cfg.domain,
        p=spec.p,
        q=cfg.q_for(spec.p, spec.gr_mode),
        gr_mode=spec.gr_mode,
        layers=cfg.layers if spec.post else 0,
        resolution=spec.h,
        omega=cfg.omega,
        family=cfg.family,
        post=spec.post,
        distortion=math.nan if spec.distortion is None else spec.distortion,
    )
    try:
        lin = build_linear(cfg, spec.h, spec.gr_mode, domain) if linear is None else linear
        if spec.distortion is not None:
            lin = distort_mesh(lin, spec.distortion, count=cfg.distort_count)
        rec.max_angle_deg = float(lin.max_angle())
        ho = lift(cfg, lin, spec.p, spec.gr_mode, domain)
        rec.diagnostics["curved_triangles"] = int(len(ho.tri_geom))
        rec.diagnostics["curved_facets"] = int(len(lin.curved_facets()))
        rec.diagnostics["min_det_j"] = float(ho.min_jacobian())
        out = solve_on(cfg, ho, domain, spec, rec)
    except Exception as exc:  # noqa: BLE001 - classified below, reported per row
        code = exit_code_for(exc)
        if code == 1:
            raise
        rec.status = f"failed: {type(exc).__name__}: {exc}"
        log.warning("run %s failed: %s", spec.run_id, exc)
        out = RunOutput(rec, exit_code=code)
    rec.wall_time_s = 0.0 if cfg.deterministic else round(time.perf_counter() - start, 3)
    return out


def _run_record(args) -> tuple:
    cfg, spec = args
    out = run_case(cfg, spec)
    return out.record, out.exit_code


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def run_many(cfg: RunConfig, specs, jobs: int | None = None):
    """Records (in ``specs`` order) and the first non-zero exit code."""
    jobs = jobs or cfg.jobs or default_jobs()
    args = [(cfg, s) for s in specs]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_record, args))
    else:
        results = [_run_record(a) for a in args]
    code = next((c for _, c in results if c != EXIT_OK), EXIT_OK)
    return [r for r, _ in results], code


def study_specs(cfg: RunConfig):
    if len(cfg.resolutions) < 2:
        raise ConfigError("a study needs at least two resolutions")
    specs = []
    for gr in cfg.study_gr_modes():
        for p in cfg.study_degrees():
            for h in sorted(cfg.resolutions, reverse=True):
                specs.append(RunSpec(h, p, gr, cfg.post))
    return specs


def quality_specs(cfg: RunConfig):
    angles = cfg.angles or PAPER_ANGLES
    specs = []
    for gr in cfg.study_gr_modes():
        for p in cfg.study_degrees():
            specs.append(RunSpec(cfg.h, p, gr, True))
            specs.extend(RunSpec(cfg.h, p, gr, True, a) for a in sorted(angles))
    return specs
