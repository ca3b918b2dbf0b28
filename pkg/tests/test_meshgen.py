from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semgr.geometry import Circle, Domain, Hole, ellipse_domain, flower_domain, square_domain
from semgr.meshgen import (
    INTERIOR,
    OUTER,
    MeshParams,
    build_ahf,
    generate_mesh,
    march_parameters,
    sizing_from_curvature,
    target_length,
)
from semgr.meshgen.mesh import NonManifoldError

DOMAINS = {"flower": flower_domain, "ellipse": ellipse_domain}


@lru_cache(maxsize=None)
def _mesh(kind, h, gr):
    return generate_mesh(DOMAINS[kind](), MeshParams(h, gr))


CASES = [(k, h, g) for k in DOMAINS for h in (1 / 16, 1 / 32) for g in ("none", "h")]


@given(
    k=st.floats(0, 1e4),
    theta=st.floats(0.01, 1.0),
    h_min=st.floats(1e-4, 0.1),
    span=st.floats(1.0, 100.0),
)
def test_sizing_clamp_law(k, theta, h_min, span):
    h_max = h_min * span
    h = float(target_length(k, theta, h_min, h_max))
    raw = theta / k if k > 0 else np.inf
    assert h == min(max(raw, h_min), h_max)
    assert h_min <= h <= h_max


def test_sizing_flat_curve_gets_h_max():
    assert target_length(0.0, 0.2, 0.01, 0.1) == 0.1


def test_marching_follows_sizing():
    c = Circle(radius=0.2)
    s = sizing_from_curvature(c, theta_max=0.2, h_min=0.001, h_max=0.1)
    # curvature 5 everywhere: h = 0.04, about 2 pi 0.2 / 0.04 = 31.4 nodes
    t = march_parameters(c, s)
    assert len(t) == 31
    seg = np.linalg.norm(np.diff(c.eval(np.r_[t, t[0]]), axis=0), axis=1)
    np.testing.assert_allclose(seg, seg.mean(), rtol=1e-3)


@pytest.mark.parametrize("kind,h,gr", CASES)
def test_ahf_sibling_involution(kind, h, gr):
    m = _mesh(kind, h, gr)
    sib = build_ahf(m.elements)
    e, k = np.nonzero(sib >= 0)
    twin = sib[e, k]
    back = sib[twin // 4, twin % 4]
    np.testing.assert_array_equal(back, 4 * e + k)
    assert np.all(twin // 4 != e)


def test_ahf_rejects_non_manifold():
    elems = np.array([[0, 1, 2, -1], [1, 0, 3, -1], [0, 1, 4, -1]])
    with pytest.raises(NonManifoldError):
        build_ahf(elems)


def test_ahf_small_example():
    # two triangles sharing edge (1, 2)
    sib = build_ahf(np.array([[0, 1, 2, -1], [2, 1, 3, -1]]))
    assert sib[0, 1] == 4 * 1 + 0 and sib[1, 0] == 4 * 0 + 1
    assert (sib >= 0).sum() == 2


@pytest.mark.parametrize("kind,h,gr", CASES)
def test_mesh_validity(kind, h, gr):
    m = _mesh(kind, h, gr)
    assert np.all(m.areas() > 0)
    assert m.max_angle() < 180.0 and m.min_angle() > 0.0
    # curve nodes lie on the curve at their parameter
    on = m.node_tag >= 0
    curve = DOMAINS[kind]().holes[0].curve
    np.testing.assert_allclose(m.nodes[on], curve.eval(m.node_t[on]), atol=1e-13)
    # boundary facets are either on the box or on the curve
    for _, _, a, b in m.boundary_facets():
        assert m.is_curved_facet(a, b) or (m.node_tag[a] == OUTER and m.node_tag[b] == OUTER)
    # no triangle carries two curved facets
    for tri in m.tris:
        tags = m.node_tag[tri]
        assert np.sum(tags >= 0) <= 2 or len(set(tags)) > 1
    # every node is used
    assert len(np.unique(m.elements[m.elements >= 0])) == m.n_nodes


@pytest.mark.parametrize("kind", list(DOMAINS))
def test_h_gr_refines_high_curvature(kind):
    none, h = _mesh(kind, 1 / 16, "none"), _mesh(kind, 1 / 16, "h")
    assert np.sum(h.node_tag >= 0) > np.sum(none.node_tag >= 0)
    curve = DOMAINS[kind]().holes[0].curve
    t = np.sort(h.node_t[h.node_tag >= 0])
    seg = np.linalg.norm(np.diff(curve.eval(np.r_[t, t[0]]), axis=0), axis=1)
    k = curve.curvature(t)
    # the shortest segments sit where the curvature peaks
    assert k[np.argmin(seg)] > np.median(k)


def test_square_is_all_quads():
    m = generate_mesh(square_domain(), MeshParams(1 / 8))
    assert m.n_quads == 64 and len(m.tris) == 0
    assert np.all(m.node_tag[np.any((m.nodes == 0) | (m.nodes == 1), axis=1)] == OUTER)
    assert np.all(m.node_tag[np.all((m.nodes > 0) & (m.nodes < 1), axis=1)] == INTERIOR)


def test_generation_is_deterministic():
    a = generate_mesh(flower_domain(), MeshParams(1 / 16, "h"))
    b = generate_mesh(flower_domain(), MeshParams(1 / 16, "h"))
    np.testing.assert_array_equal(a.nodes, b.nodes)
    np.testing.assert_array_equal(a.tris, b.tris)


def test_circle_hole_area_is_recovered():
    dom = Domain([Hole(Circle(radius=0.2, center=(0.5, 0.5)))])
    m = generate_mesh(dom, MeshParams(1 / 32, "h"))
    assert abs(m.areas().sum() - dom.area()) < 2e-3


def test_rejects_unknown_gr_mode():
    with pytest.raises(ValueError):
        generate_mesh(flower_domain(), MeshParams(1 / 16, "p"))
