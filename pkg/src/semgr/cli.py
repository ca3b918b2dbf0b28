"""Command-line driver: ``semgr {mesh,solve,study,quality-study}``.

Settings come from an INI file (``--config``), then ``SEMGR_<SECTION>_<KEY>``
environment variables, then flags.  Exit codes: 0 success, 2 configuration,
3 meshing, 4 solve or post-processing, 5 file I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .analysis import emit_report
from .config import ConfigError, dump_config, load_config
from .fileio import MeshFileError, read_mesh, write_mesh, write_solution
from .meshgen import GR_MODES
from .pipeline import EXIT_CONFIG, EXIT_IO, EXIT_OK, RunSpec

log = logging.getLogger("semgr")

DEFAULTS_HELP = """\
configuration file sections and defaults:
  [domain]          kind = flower (flower|ellipse|square|circle), hole_bc = neumann
  [mesh]            h = 1/16, resolutions = (study only, e.g. 1/8, 1/16, 1/32),
                    gr_mode = h, theta_max = 0.2, h_min = auto (h/8),
                    h_max = auto (h), clearance = 1.5
  [discretization]  degree = 3, degrees = (study list), geom_degree = auto
                    (p+1 for hp, else p), gr_modes = (study list),
                    family = gl (gl|equi), strict_geometry = true
  [problem]         omega = 10, solution = trig (trig|linear patch test)
  [solver]          tol = 1e-12, method = direct (direct|gmres)
  [post]            enabled = false, layers = 2, normal = facet (facet|exact)
  [quality]         angles = 179.9999, 179.999, 179.99, 179.9, 179, 170
                    count = 3
  [output]          dir = out, deterministic = true, jobs = 0 (all cores)
every key can be overridden by SEMGR_<SECTION>_<KEY>, e.g. SEMGR_MESH_H=1/32
exit codes: 0 ok, 2 config, 3 meshing, 4 solve, 5 I/O
"""


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--post", action="store_true", default=None, help="run AES-FEM post-processing")
    common.add_argument("--layers", type=int, help="quad layers in the post-processing submesh")
    common.add_argument("--gr", choices=GR_MODES, help="geometric refinement mode")
    common.add_argument("--degree", type=int, help="solution degree p")
    common.add_argument("--geom-degree", type=int, help="geometry degree q (default p, or p+1 for hp)")
    common.add_argument("--omega", type=float, help="frequency of the manufactured solution")
    common.add_argument("--jobs", type=int, help="worker processes for studies (0 = all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(
        prog="semgr",
        description="Curvature-refined mixed spectral-element meshes, solves and studies.",
        epilog=DEFAULTS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="generate and write a mesh")
    sp = sub.add_parser("solve", parents=[common], help="solve on one mesh")
    sp.add_argument("--mesh", type=Path, help="solve on an existing mesh file instead of meshing")
    sub.add_parser("study", parents=[common], help="convergence study over [mesh] resolutions")
    sub.add_parser("quality-study", parents=[common], help="distorted-mesh study over [quality] angles")
    return ap


def _config(args):
    overrides = {
        "out": args.out,
        "post": args.post,
        "layers": args.layers,
        "gr_mode": args.gr,
        "degree": args.degree,
        "geom_degree": args.geom_degree,
        "omega": args.omega,
        "jobs": args.jobs,
    }
    if args.gr is not None:
        overrides["gr_modes"] = (args.gr,)
    if args.degree is not None:
        overrides["degrees"] = (args.degree,)
    return load_config(args.config, overrides=overrides)


def cmd_mesh(cfg) -> int:
    out = Path(cfg.out)
    domain = cfg.make_domain()
    lin = pl.build_linear(cfg, cfg.h, cfg.gr_mode, domain)
    ho = pl.lift(cfg, lin, cfg.degree, cfg.gr_mode, domain)
    write_mesh(out / "mesh.txt", lin, domain, ho)
    summary = pl.mesh_summary(ho)
    (out / "mesh_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.ini").write_text(dump_config(cfg))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_solve(cfg, mesh_path=None) -> int:
    out = Path(cfg.out)
    spec = RunSpec(cfg.h, cfg.degree, cfg.gr_mode, cfg.post)
    if mesh_path is not None:
        lin, domain, ho = read_mesh(mesh_path)
        if ho is None:
            raise MeshFileError(f"{mesh_path} has no high-order block")
        if domain is None:
            domain = cfg.make_domain()
        rec = pl.RunRecord(
            run_id=f"file_p{ho.p}", domain=cfg.domain, p=ho.p, q=ho.q, gr_mode=cfg.gr_mode,
            layers=cfg.layers if cfg.post else 0, resolution=cfg.h, omega=cfg.omega,
            family=ho.family, post=cfg.post,
        )
        rec.max_angle_deg = float(lin.max_angle())
        spec = RunSpec(cfg.h, ho.p, cfg.gr_mode, cfg.post)
        try:
            res = pl.solve_on(cfg, ho, domain, spec, rec)
        except Exception as exc:  # noqa: BLE001
            code = pl.exit_code_for(exc)
            if code == 1:
                raise
            rec.status = f"failed: {type(exc).__name__}: {exc}"
            res = pl.RunOutput(rec, exit_code=code)
    else:
        res = pl.run_case(cfg, spec)
    if res.values is not None:
        write_solution(out / "solution.txt", res.values)
    if res.post_values is not None:
        write_solution(out / "solution_post.txt", res.post_values)
    emit_report([res.record], out, "solve")
    _print_records([res.record])
    return res.exit_code


def cmd_study(cfg) -> int:
    specs = pl.study_specs(cfg)
    records, code = pl.run_many(cfg, specs)
    emit_report(records, cfg.out, "study")
    _print_records(records)
    return code


def cmd_quality_study(cfg) -> int:
    specs = pl.quality_specs(cfg)
    records, code = pl.run_many(cfg, specs)
    emit_report(records, cfg.out, "quality")
    _print_records(records)
    return code


def _print_records(records):
    for r in records:
        print(
            f"{r.run_id:28s} dof={r.dof:7d} l2_all={r.l2_all:.3e} "
            f"l2_interior={r.l2_interior:.3e} l2_post={r.l2_post:.3e} {r.status}"
        )


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        if args.command == "mesh":
            return cmd_mesh(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, args.mesh)
        if args.command == "study":
            return cmd_study(cfg)
        return cmd_quality_study(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, MeshFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - mapped to an exit class
        code = pl.exit_code_for(exc)
        if code == 1:
            raise
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
