import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semgr.analysis import (
    CSV_COLUMNS,
    ConvergenceReport,
    DistortionError,
    ManufacturedCase,
    RunRecord,
    convergence_rate,
    derived_source,
    distort_mesh,
    emit_report,
    exact_solution,
    fitted_rate,
    l2_nodal_error,
    rms_nodal_error,
)
from semgr.geometry import flower_domain
from semgr.meshgen import MeshParams, generate_mesh


@lru_cache(maxsize=None)
def _flower(h=1 / 16, gr="h"):
    return generate_mesh(flower_domain(), MeshParams(h, gr))


# --------------------------------------------------------- manufactured data


def _fd_source(omega, x, y, h=1e-3):
    u = lambda a, b: exact_solution(omega, (a, b))[0]
    lap = (u(x + h, y) + u(x - h, y) + u(x, y + h) + u(x, y - h) - 4 * u(x, y)) / h**2
    ux = (u(x + h, y) - u(x - h, y)) / (2 * h)
    uy = (u(x, y + h) - u(x, y - h)) / (2 * h)
    return -lap + x * ux - y * uy


@given(x=st.floats(0, 1), y=st.floats(0, 1), omega=st.sampled_from([1.0, 2.0, 10.0]))
def test_derived_source_matches_finite_differences(x, y, omega):
    f = derived_source(omega, (x, y))
    scale = max(1.0, (omega * math.pi) ** 2)
    # FD truncation is O(h^2 (omega pi)^4); h is chosen per omega
    h = 1e-3 / omega
    assert abs(f - _fd_source(omega, x, y, h)) / scale < 1e-5


@given(x=st.floats(0, 1), y=st.floats(0, 1))
def test_exact_gradient_matches_finite_differences(x, y):
    h = 1e-6
    u, g = exact_solution(10.0, (x, y))
    gx = (exact_solution(10.0, (x + h, y))[0] - exact_solution(10.0, (x - h, y))[0]) / (2 * h)
    gy = (exact_solution(10.0, (x, y + h))[0] - exact_solution(10.0, (x, y - h))[0]) / (2 * h)
    assert abs(g[0] - gx) < 1e-5 * 32 and abs(g[1] - gy) < 1e-5 * 32


def test_flux_is_gradient_dot_normal():
    case = ManufacturedCase(3.0)
    ux, uy = case.grad(0.3, 0.7)
    assert case.flux(0.3, 0.7, 0.6, 0.8) == pytest.approx(0.6 * ux + 0.8 * uy)


# --------------------------------------------------------------- norms/rates


def test_nodal_norms():
    v, e = np.array([1.0, 2.0, 3.0, 4.0]), np.array([1.0, 2.0, 1.0, 2.0])
    assert l2_nodal_error(v, e) == pytest.approx(math.sqrt(8))
    assert rms_nodal_error(v, e) == pytest.approx(math.sqrt(2))
    assert l2_nodal_error(v, e, [0, 1]) == 0.0
    with pytest.raises(ValueError):
        l2_nodal_error(v, e, np.zeros(4, bool))


@given(
    rate=st.floats(0.5, 8.0),
    c=st.floats(1e-6, 1e3),
    d0=st.integers(10, 10_000),
    k=st.floats(1.5, 16.0),
)
def test_rate_recovers_power_law(rate, c, d0, k):
    d1 = d0 * k
    e0, e1 = c * d0 ** (-rate / 2), c * d1 ** (-rate / 2)
    assert convergence_rate(e0, e1, d0, d1) == pytest.approx(rate, rel=1e-9)
    # scale invariance and symmetry under swapping the pair
    assert convergence_rate(7 * e0, 7 * e1, d0, d1) == pytest.approx(rate, rel=1e-9)
    assert convergence_rate(e1, e0, d1, d0) == pytest.approx(rate, rel=1e-9)


def test_rate_halving_h_in_2d():
    # halving h quadruples the dof; an error ratio of 2^r gives rate r
    assert convergence_rate(1.0, 2.0**-3, 100, 400) == pytest.approx(3.0)
    assert convergence_rate(1.0, 2.0**-3, 100, 200, d=1) == pytest.approx(3.0)


@given(rate=st.floats(0.5, 8.0), c=st.floats(1e-3, 10.0))
def test_fitted_rate_is_exact_on_power_law(rate, c):
    dofs = np.array([100, 400, 1600, 6400])
    errs = c * dofs ** (-rate / 2)
    assert fitted_rate(errs, dofs) == pytest.approx(rate, rel=1e-9)


def test_two_point_fit_equals_pairwise_rate():
    assert fitted_rate([0.3, 0.01], [50, 700]) == pytest.approx(convergence_rate(0.3, 0.01, 50, 700))


def test_rate_rejects_bad_input():
    with pytest.raises(ValueError):
        convergence_rate(0.0, 1.0, 10, 20)
    with pytest.raises(ValueError):
        convergence_rate(1.0, 0.5, 10, 10)


# ---------------------------------------------------------------- distortion


@pytest.mark.parametrize("theta", [170.0, 179.0, 179.9, 179.99, 179.999, 179.9999])
def test_distort_reaches_target_angle(theta):
    base = _flower()
    out = distort_mesh(base, theta, count=3)
    tol = min(0.01, 0.01 * (180 - theta) + 1e-9)
    assert abs(out.max_angle() - theta) <= tol
    assert np.all(out.areas() > 0)
    np.testing.assert_array_equal(out.tris, base.tris)
    np.testing.assert_array_equal(out.quads, base.quads)
    moved = np.nonzero(np.any(out.nodes != base.nodes, axis=1))[0]
    assert 1 <= len(moved) <= 3
    # only interior gap-triangle nodes move
    assert np.all(base.node_tag[moved] == -1)
    assert not np.isin(moved, base.quads).any()
    # the input mesh is left untouched
    assert base.max_angle() < 170.0


def test_distort_is_deterministic():
    a = distort_mesh(_flower(), 179.9, count=3)
    b = distort_mesh(_flower(), 179.9, count=3)
    np.testing.assert_array_equal(a.nodes, b.nodes)


def test_distort_rejects_smaller_target():
    m = _flower()
    with pytest.raises(DistortionError):
        distort_mesh(m, m.max_angle() - 5.0)
    with pytest.raises(ValueError):
        distort_mesh(m, 180.0)


def test_distort_at_current_angle_returns_copy():
    m = _flower()
    out = distort_mesh(m, m.max_angle())
    np.testing.assert_array_equal(out.nodes, m.nodes)
    assert out.nodes is not m.nodes


# ------------------------------------------------------------------- reports


def _records():
    out = []
    for gr in ("none", "h"):
        for k, h in enumerate((1 / 16, 1 / 32, 1 / 64)):
            dof = 1000 * 4**k
            e = 2.0 ** (-4 * k) * (1.0 if gr == "h" else 10.0)
            out.append(
                RunRecord(
                    run_id=f"h{1 / h:g}_p2_{gr}", domain="flower", p=2, q=2, gr_mode=gr, layers=0,
                    resolution=h, dof=dof, l2_all=e, l2_interior=e / 2,
                )
            )
    out.append(RunRecord("broken", "flower", 2, 2, "h", 0, 1 / 128, status="failed: MeshError: x"))
    return out


def test_report_rates_follow_series():
    rep = ConvergenceReport(_records()).compute_rates()
    by_id = {(r.gr_mode, r.run_id): r for r in rep.records}
    assert math.isnan(by_id[("h", "h16_p2_h")].rate_all)
    assert by_id[("h", "h32_p2_h")].rate_all == pytest.approx(4.0)
    assert by_id[("none", "h64_p2_none")].rate_interior == pytest.approx(4.0)
    assert math.isnan(by_id[("h", "broken")].rate_all)
    series = rep.series()
    assert "flower p=2 q=2 gr=h" in series and "flower p=2 q=2 gr=none interior" in series
    assert len(series["flower p=2 q=2 gr=h"]) == 3


def test_report_files_are_deterministic(tmp_path):
    a = emit_report(_records(), tmp_path / "a")
    b = emit_report(_records(), tmp_path / "b")
    for key in ("csv", "json", "plot"):
        assert a[key].read_bytes() == b[key].read_bytes()
    header = a["csv"].read_text().splitlines()[0].split(",")
    assert tuple(header[: len(CSV_COLUMNS)]) == CSV_COLUMNS
    assert "null" in a["json"].read_text()  # NaN is written as JSON null
    rows = a["csv"].read_text().splitlines()
    assert rows[-1].endswith("failed: MeshError: x")


def test_report_float_round_trip(tmp_path):
    rec = _records()[:1]
    rec[0].l2_all = 0.1 + 0.2
    p = emit_report(rec, tmp_path)
    row = p["csv"].read_text().splitlines()[1].split(",")
    assert float(row[CSV_COLUMNS.index("l2_all")]) == 0.1 + 0.2


def test_empty_report_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


def test_linear_case_is_consistent():
    from semgr.analysis import LinearCase, manufactured_case

    case = manufactured_case("linear")
    assert isinstance(case, LinearCase)
    x, y = np.array([0.1, 0.7]), np.array([0.3, -0.2])
    np.testing.assert_allclose(case.u(x, y), x + y)
    # -lap(u) = 0, so the source is v . grad(u) = x - y
    np.testing.assert_allclose(case.source(x, y), x - y)
    np.testing.assert_allclose(case.flux(x, y, 0.6, 0.8), 1.4)
    with pytest.raises(ValueError):
        manufactured_case("cubic")
