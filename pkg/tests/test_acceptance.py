"""Acceptance criteria, run at their stated tolerances on the committed configs.

Every check is recorded with ``record_check``; the terminal summary prints one
PASS/FAIL line per criterion followed by the individual checks.  Checks that
cannot be met by construction are kept, reported as FAIL, and marked xfail
with the reason.

Rates use the dof-based formula.  For the superconvergence gates (criteria 1
and 3) the formula is applied to the RMS nodal error, the sum-of-squares
error divided by sqrt(node count): with O(h^(p+2)) errors at O(h^-2) nodes
the plain sum-of-squares norm can only show p+1.  Both rates are printed.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from conftest import record_check

from semgr import pipeline as pl
from semgr.analysis import convergence_rate, fitted_rate
from semgr.config import load_config

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

_RUNS: dict = {}


def _key(cfg, spec):
    # fields that do not change a single run
    return replace(cfg, out="", degrees=(), gr_modes=(), resolutions=(), angles=(), jobs=0), spec


def run(cfg, spec):
    """Cached single run: (record, seconds)."""
    k = _key(cfg, spec)
    if k not in _RUNS:
        t0 = time.perf_counter()
        out = pl.run_case(cfg, spec)
        _RUNS[k] = (out.record, time.perf_counter() - t0)
    return _RUNS[k]


def config(name, **over):
    return load_config(CONFIGS / name, env={}, overrides=over)


def study(name, **over):
    """{(gr, p, h): record} for a committed study config, plus total seconds."""
    cfg = config(name, **over)
    out, secs = {}, 0.0
    for spec in pl.study_specs(cfg):
        rec, s = run(cfg, spec)
        out[(spec.gr_mode, spec.p, spec.h)] = rec
        secs += s
    return cfg, out, secs


def rms(rec, which="all"):
    if which == "all":
        return rec.l2_all / math.sqrt(rec.dof)
    return rec.l2_interior / math.sqrt(rec.diagnostics["interior_nodes"])


def series(recs, gr, p, hs):
    rows = [recs[(gr, p, h)] for h in sorted(hs, reverse=True)]
    assert all(r.ok for r in rows), [r.status for r in rows if not r.ok]
    return rows


# ------------------------------------------------------------------ criterion 1


@pytest.fixture(scope="module")
def square():
    t0 = time.perf_counter()
    _, sem, _ = study("square_superconvergence.ini")
    _, fem, _ = study("square_fem_baseline.ini")
    return sem, fem, time.perf_counter() - t0


def _square_rates(recs, p, hs):
    rows = series(recs, "none", p, hs)
    dofs = [r.dof for r in rows]
    return fitted_rate([rms(r) for r in rows], dofs), fitted_rate([r.l2_all for r in rows], dofs)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_c1_sem_superconvergence(square, p):
    sem, _, secs = square
    hs = config("square_superconvergence.ini").resolutions
    r_rms, r_sum = _square_rates(sem, p, hs)
    ok = record_check(1, f"SEM p={p} rate >= {p + 1.7}", r_rms >= p + 1.7,
                      f"rms rate {r_rms:.2f}, sum-of-squares rate {r_sum:.2f}")
    assert ok


@pytest.mark.parametrize(
    "p",
    [
        pytest.param(2, marks=pytest.mark.xfail(
            strict=True,
            reason="equispaced and Gauss-Lobatto nodes coincide for p=2, so quadratic FEM is "
            "the SEM and superconverges too")),
        3,
        4,
    ],
)
def test_c1_fem_baseline(square, p):
    _, fem, _ = square
    hs = config("square_fem_baseline.ini").resolutions
    r_rms, r_sum = _square_rates(fem, p, hs)
    ok = record_check(1, f"FEM p={p} rate <= {p + 1.3}", r_rms <= p + 1.3,
                      f"rms rate {r_rms:.2f}, sum-of-squares rate {r_sum:.2f}")
    assert ok


def test_c1_runtime(square):
    secs = square[2]
    assert record_check(1, "runtime < 120 s", secs < 120.0, f"{secs:.1f} s")


def test_c1_dof_rate_matches_edge_rate(square):
    # the dof-based formula agrees with the edge-length rate on the square
    sem, _, _ = square
    worst = 0.0
    for p in (2, 3, 4):
        a, b = sem[("none", p, 1 / 32)], sem[("none", p, 1 / 64)]
        worst = max(worst, abs(convergence_rate(rms(a), rms(b), a.dof, b.dof) - math.log2(rms(a) / rms(b))))
    assert record_check(1, "dof rate vs edge-length rate within 0.05", worst <= 0.05, f"max gap {worst:.3f}")


# -------------------------------------------------------------- criteria 2, 3, 4


@pytest.fixture(scope="module")
def flower():
    return study("neumann_flower_h_gr.ini")


def test_c2_h_gr_improvement(flower):
    cfg, recs, _ = flower
    hs = sorted(cfg.resolutions, reverse=True)
    mid = hs[len(hs) // 2]
    none, hgr = recs[("none", 3, mid)], recs[("h", 3, mid)]
    secs = run(config("neumann_flower_h_gr.ini"), pl.RunSpec(mid, 3, "none", True))[1] + run(
        config("neumann_flower_h_gr.ini"), pl.RunSpec(mid, 3, "h", True))[1]
    ratio = hgr.l2_all / none.l2_all
    ok = record_check(2, f"p=3 h=1/{1 / mid:g} l2(h-GR) <= l2(no GR) / 10", ratio <= 0.1,
                      f"{hgr.l2_all:.3e} vs {none.l2_all:.3e}, ratio {ratio:.2e}; "
                      f"rms ratio {rms(hgr) / rms(none):.2e}")
    ok &= record_check(2, "runtime < 600 s", secs < 600.0, f"{secs:.1f} s (both runs with post)")
    assert ok


@pytest.mark.parametrize("p", [2, 3, 4])
def test_c3_interior_rates(flower, p):
    cfg, recs, _ = flower
    raw = replace(cfg, post=False)
    rates = {}
    for gr in ("h", "none"):
        # the interior error is a property of the raw SEM solve; a row whose
        # post-processing aborted is re-run without it
        rows = [
            recs[(gr, p, h)] if recs[(gr, p, h)].ok else run(raw, pl.RunSpec(h, p, gr, False))[0]
            for h in sorted(cfg.resolutions, reverse=True)
        ]
        assert all(r.ok for r in rows), [r.status for r in rows if not r.ok]
        rates[gr] = fitted_rate([rms(r, "interior") for r in rows], [r.dof for r in rows])
        pair = [convergence_rate(rms(a, "interior"), rms(b, "interior"), a.dof, b.dof)
                for a, b in zip(rows, rows[1:])]
        plain = fitted_rate([r.l2_interior for r in rows], [r.dof for r in rows])
        record_check(3, f"p={p} gr={gr} interior rates", True,
                     f"fit {rates[gr]:.2f}, pairs {', '.join(f'{x:.2f}' for x in pair)}, "
                     f"sum-of-squares fit {plain:.2f}")
    ok = record_check(3, f"p={p} h-GR interior rate >= {p + 1.5}", rates["h"] >= p + 1.5, f"{rates['h']:.2f}")
    ok &= record_check(3, f"p={p} no-GR rate degraded by >= 0.5", rates["none"] <= rates["h"] - 0.5,
                       f"{rates['none']:.2f} vs {rates['h']:.2f}")
    assert ok


C4_REASON = (
    "AES-FEM of degree p converges at O(h^p) while the SEM nodal error is "
    "superconvergent and its near-boundary error is small on our gap meshes; "
    "the post-processed error is dominated by the AES-FEM discretization error"
)


@pytest.mark.xfail(strict=True, reason=C4_REASON)
def test_c4_post_processing_benefit(flower):
    cfg, recs, _ = flower
    finest = min(cfg.resolutions)
    ok = True
    for dom, table in (("flower", recs), ("ellipse", study("neumann_ellipse_h_gr.ini", gr_modes=("h",))[1])):
        for p in (2, 3, 4):
            r = table[("h", p, finest)]
            assert r.ok, r.status
            gain = r.l2_all / r.l2_post
            if dom == "flower" and p == 4:
                ok &= record_check(4, "flower p=4 finest: post reduces l2 by >= 2x", gain >= 2.0,
                                   f"SEM {r.l2_all:.3e}, post {r.l2_post:.3e}, gain {gain:.3g}")
            ok &= record_check(4, f"{dom} p={p} finest: post increase <= 5%", r.l2_post <= 1.05 * r.l2_all,
                               f"SEM {r.l2_all:.3e}, post {r.l2_post:.3e}")
    assert ok


# ------------------------------------------------------------------ criterion 5


@pytest.mark.parametrize("p", [2, 3, 4])
def test_c5_superparametric_post(p):
    cfg, recs, _ = study("superparametric_flower.ini")
    ok = True
    for h in sorted(cfg.resolutions, reverse=True):
        a, b = recs[("h", p, h)], recs[("hp", p, h)]
        assert a.ok and b.ok
        ok &= record_check(5, f"p={p} h=1/{1 / h:g} post(hp) <= 1.05 post(h)", b.l2_post <= 1.05 * a.l2_post,
                           f"hp {b.l2_post:.4e}, h {a.l2_post:.4e}; raw hp {b.l2_all:.3e}, h {a.l2_all:.3e}")
    assert ok


# ------------------------------------------------------------------ criterion 6


@pytest.fixture(scope="module")
def quality():
    cfg = config("mesh_quality_flower.ini")
    out = {}
    for spec in pl.quality_specs(cfg):
        out[(spec.gr_mode, spec.p, spec.distortion)] = run(cfg, spec)[0]
    return cfg, out


GATED = (170.0, 179.0, 179.9, 179.99)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_c6_mesh_quality(quality, p):
    cfg, recs = quality
    rows = [recs[("h", p, a)] for a in GATED]
    assert all(r.ok for r in rows), [r.status for r in rows]
    post = np.array([r.l2_post for r in rows])
    spread = post.max() / post.min()
    extra = ", ".join(
        f"{a}: {recs[('h', p, a)].l2_post:.3e}" for a in (179.999, 179.9999) if recs[("h", p, a)].ok
    )
    ok = record_check(6, f"p={p} h-GR post error spread over 170..179.99 < 2x", spread < 2.0,
                      f"spread {spread:.3f}; range {post.min():.3e}..{post.max():.3e}; beyond gate {extra}")
    for a in GATED:
        r = recs[("none", p, a)]
        assert r.ok, r.status
        gain = r.l2_all / r.l2_post
        ok &= record_check(6, f"p={p} no GR angle {a:g}: post gain < 2x", gain < 2.0,
                           f"SEM {r.l2_all:.3e}, post {r.l2_post:.3e}")
    for r in rows:
        ok &= record_check(6, f"p={p} angle {r.distortion:g} reached", abs(r.max_angle_deg - r.distortion) <= 0.01,
                           f"{r.max_angle_deg:.6f}")
    assert ok


# ------------------------------------------------------------------ criterion 7


def test_c7_property_suites():
    """Fast instances of each property family (full suites live in the unit tests)."""
    import sympy as sp
    from numpy.polynomial import legendre as L

    from semgr.aesfem import build_glp_basis, extract_boundary_submesh
    from semgr.analysis import derived_source, exact_solution
    from semgr.geometry import flower_domain
    from semgr.highorder import insert_high_order_nodes
    from semgr.meshgen import MeshParams, build_ahf, generate_mesh, target_length
    from semgr.quadrature import quadrature_rule
    from semgr.reference import QUAD, TRI, gauss_lobatto_1d, reference_element
    from semgr.sem import BCSpec, PDECoefficients, paper_velocity, solve_field

    rng = np.random.default_rng(7)
    ok = True

    worst = 0.0
    for shape in (QUAD, TRI):
        for p in range(1, 5):
            ref = reference_element(shape, p)
            phi, _ = ref.eval(ref.nodes)
            worst = max(worst, np.abs(phi - np.eye(ref.n_nodes)).max())
            xi = np.abs(rng.uniform(-1, 1, (20, 2))) / (2 if shape == TRI else 1)
            worst = max(worst, np.abs(ref.eval(xi)[0].sum(1) - 1).max())
    ok &= record_check(7, "partition of unity / Kronecker delta <= 1e-12", worst <= 1e-12, f"{worst:.1e}")

    X, Y = sp.symbols("x y")
    worst = 0.0
    for shape, dom in ((QUAD, ((X, -1, 1), (Y, -1, 1))), (TRI, ((Y, 0, 1 - X), (X, 0, 1)))):
        pts, w = quadrature_rule(shape, 8)
        for a in range(9):
            for b in range(9 - a):
                exact = float(sp.integrate(X**a * Y**b, *dom))
                worst = max(worst, abs(w @ (pts[:, 0] ** a * pts[:, 1] ** b) - exact))
    ok &= record_check(7, "quadrature exact on monomials (symbolic)", worst <= 1e-13, f"{worst:.1e}")

    worst = 0.0
    for p in range(2, 9):
        roots = np.sort(np.real(L.legroots(L.legder([0] * p + [1]))))
        worst = max(worst, np.abs(gauss_lobatto_1d(p)[1:-1] - roots).max())
    ok &= record_check(7, "GL nodes vs root finding <= 1e-12", worst <= 1e-12, f"{worst:.1e}")

    dom = flower_domain()
    lin = generate_mesh(dom, MeshParams(1 / 16, "h"))
    sib = build_ahf(lin.elements)
    e, k = np.nonzero(sib >= 0)
    inv = np.array_equal(sib[sib[e, k] // 4, sib[e, k] % 4], 4 * e + k)
    ok &= record_check(7, "AHF sibling involution", inv, f"{len(e)} interior half-facets")

    dets = [r.diagnostics.get("min_det_j", np.nan) for r, _ in _RUNS.values() if r.ok]
    dets.append(insert_high_order_nodes(lin, dom, 4, 5).min_jacobian())
    ok &= record_check(7, "det J > 0 on all study meshes", min(dets) > 0,
                       f"{len(dets)} meshes, min {min(dets):.2e}")

    ho = insert_high_order_nodes(lin, dom, 3, 4)
    res = ho.curved_node_residual(dom)
    ok &= record_check(7, "curve-projection residual < 1e-10", res < 1e-10, f"{res:.1e}")

    iso_dom = flower_domain("dirichlet")
    u_lin = BCSpec(lambda x, y: x + y, lambda x, y, nx, ny: nx + ny)
    coeffs = PDECoefficients(paper_velocity, lambda x, y: x - y)
    iso = insert_high_order_nodes(lin, iso_dom, 3, 3)
    err = np.abs(solve_field(iso, coeffs, u_lin, iso_dom).values - iso.nodes.sum(1)).max()
    ok &= record_check(7, "patch test on curved isoparametric mesh <= 1e-9", err <= 1e-9, f"{err:.1e}")

    sub = extract_boundary_submesh(ho, dom, 2)
    nb = sub.neighbours()
    worst = 0.0
    for i in rng.choice(np.nonzero(~sub.fixed)[0], 20, replace=False):
        b = build_glp_basis(sub, int(i), 3, nb)
        z = (sub.points[b.stencil] - b.center) / b.radius
        for a, c in b.exps:
            val, _ = b.evaluate(z[:, 0] ** a * z[:, 1] ** c, b.center[None])
            worst = max(worst, abs(val[0] - (1.0 if a == c == 0 else 0.0)))
    ok &= record_check(7, "GLP polynomial consistency <= 1e-9", worst <= 1e-9, f"{worst:.1e}")

    k = rng.uniform(0, 100, 200)
    h = target_length(k, 0.2, 0.01, 0.1)
    law = np.minimum(np.maximum(0.2 / k, 0.01), 0.1)
    ok &= record_check(7, "sizing clamp law", np.array_equal(h, law), "200 random curvatures")

    worst = 0.0
    for x, y in rng.uniform(0, 1, (20, 2)):
        step = 1e-4
        u = lambda a, b: exact_solution(10.0, (a, b))[0]
        lap = (u(x + step, y) + u(x - step, y) + u(x, y + step) + u(x, y - step) - 4 * u(x, y)) / step**2
        fd = -lap + x * (u(x + step, y) - u(x - step, y)) / (2 * step) - y * (u(x, y + step) - u(x, y - step)) / (2 * step)
        worst = max(worst, abs(derived_source(10.0, (x, y)) - fd) / (10 * math.pi) ** 2)
    ok &= record_check(7, "derived source vs FD < 1e-5 (relative to (w pi)^2)", worst < 1e-5, f"{worst:.1e}")

    r = convergence_rate(1.0, 2.0**-5, 1000, 4000)
    fr = fitted_rate([1.0, 2.0**-5, 2.0**-10], [1000, 4000, 16000])
    ok &= record_check(7, "rate-formula identities", abs(r - 5) < 1e-12 and abs(fr - 5) < 1e-12, f"{r:.12g}, {fr:.12g}")
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="with q = p + 1 a physical linear function is degree p + 1 in the reference "
    "coordinates of a curved element, outside the degree-p trial space",
)
def test_c7_patch_test_superparametric():
    from semgr.geometry import flower_domain
    from semgr.highorder import insert_high_order_nodes
    from semgr.meshgen import MeshParams, generate_mesh
    from semgr.sem import BCSpec, PDECoefficients, paper_velocity, solve_field

    dom = flower_domain("dirichlet")
    ho = insert_high_order_nodes(generate_mesh(dom, MeshParams(1 / 16, "h")), dom, 3, 4)
    u_lin = BCSpec(lambda x, y: x + y, lambda x, y, nx, ny: nx + ny)
    coeffs = PDECoefficients(paper_velocity, lambda x, y: x - y)
    err = np.abs(solve_field(ho, coeffs, u_lin, dom).values - ho.nodes.sum(1)).max()
    assert record_check(7, "patch test on curved superparametric mesh <= 1e-9", err <= 1e-9, f"{err:.1e}")
