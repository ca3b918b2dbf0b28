import numpy as np
import pytest

from semgr.fileio import (
    MeshFileError,
    format_mesh,
    parse_mesh,
    read_mesh,
    read_solution,
    write_mesh,
    write_solution,
)
from semgr.geometry import ellipse_domain, flower_domain
from semgr.highorder import insert_high_order_nodes
from semgr.meshgen import MeshParams, generate_mesh


@pytest.fixture(scope="module")
def meshes():
    dom = flower_domain()
    lin = generate_mesh(dom, MeshParams(1 / 16, "h"))
    return dom, lin, insert_high_order_nodes(lin, dom, 3, 4)


def test_round_trip_is_bit_exact(meshes, tmp_path):
    dom, lin, ho = meshes
    path = write_mesh(tmp_path / "m.txt", lin, dom, ho)
    lin2, dom2, ho2 = read_mesh(path)
    for name in ("nodes", "quads", "tris", "node_tag"):
        np.testing.assert_array_equal(getattr(lin2, name), getattr(lin, name))
    np.testing.assert_array_equal(lin2.node_t, lin.node_t)  # NaN in the same slots
    assert dom2.holes == dom.holes
    assert (ho2.p, ho2.q, ho2.family) == (ho.p, ho.q, ho.family)
    for name in ("nodes", "quad_conn", "tri_conn", "node_hole", "node_outer", "node_t"):
        np.testing.assert_array_equal(getattr(ho2, name), getattr(ho, name))
    assert ho2.tri_geom.keys() == ho.tri_geom.keys()
    for t in ho.tri_geom:
        np.testing.assert_array_equal(ho2.tri_geom[t], ho.tri_geom[t])
        assert ho2.curved_edge[t] == ho.curved_edge[t]
    assert format_mesh(lin2, dom2, ho2) == path.read_text()


def test_linear_only_file():
    dom = ellipse_domain()
    lin = generate_mesh(dom, MeshParams(1 / 16))
    lin2, dom2, ho2 = parse_mesh(format_mesh(lin))
    assert dom2 is None and ho2 is None
    np.testing.assert_array_equal(lin2.nodes, lin.nodes)


def test_comments_are_ignored(meshes):
    _, lin, _ = meshes
    text = format_mesh(lin).replace("\nquads", "\n# a comment\nquads", 1)
    np.testing.assert_array_equal(parse_mesh(text)[0].quads, lin.quads)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda t: t.replace("semgr-mesh 1", "other 1", 1),
        lambda t: t.replace("\nend\n", "\n"),
        lambda t: t.replace("\nquad ", "\nquad x ", 1),
        lambda t: t.replace("\ntris ", "\ntriangles ", 1),
    ],
)
def test_malformed_files_raise(meshes, mutate):
    _, lin, _ = meshes
    with pytest.raises(MeshFileError):
        parse_mesh(mutate(format_mesh(lin)))


def test_solution_round_trip(tmp_path, rng):
    v = rng.standard_normal(50) * 10.0 ** rng.integers(-12, 12, 50)
    path = write_solution(tmp_path / "s.txt", v)
    np.testing.assert_array_equal(read_solution(path), v)


def test_solution_ids_must_be_ordered(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("0 1.0\n2 2.0\n")
    with pytest.raises(MeshFileError):
        read_solution(p)
