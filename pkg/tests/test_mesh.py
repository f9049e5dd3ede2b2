# tests/test_mesh.py
import numpy as np
import pytest

from modules.components import ShiftMap
from modules.errors import EmptyTagError, OutsideDomainError
from modules.mesh import Mesh, interval_mesh, structured_quad_mesh, subdivide


def test_subdivide_keeps_breakpoints_and_bounds_cell_size():
    xs = subdivide([0.0, 0.3, 1.0], 0.25)
    assert 0.3 in xs
    assert xs[0] == 0.0 and xs[-1] == 1.0
    assert np.all(np.diff(xs) <= 0.25 + 1e-12)
    assert np.all(np.diff(xs) > 0)


def test_structured_mesh_counts(unit_square):
    assert unit_square.n_elements == 16
    assert unit_square.n_nodes == 81
    assert unit_square.nodes_per_element == 9
    assert unit_square.dim == 2


def test_local_node_numbering_is_row_major(unit_square):
    # local node a = ly * (p + 1) + lx
    assert list(unit_square.connectivity[0]) == [0, 1, 2, 9, 10, 11, 18, 19, 20]
    X = unit_square.nodes[unit_square.connectivity[0]]
    np.testing.assert_allclose(X[1], [0.125, 0.0])
    np.testing.assert_allclose(X[3], [0.0, 0.125])


def test_boundary_tags(unit_square):
    assert sorted(unit_square.tags) == ["bottom", "left", "right", "top"]
    for name in unit_square.tags:
        assert len(unit_square.facets(name)) == 4
    assert np.all(unit_square.facets("top")[:, 1] == 2)
    top_nodes = unit_square.tag_nodes("top")
    assert len(top_nodes) == 9
    np.testing.assert_allclose(unit_square.nodes[top_nodes, 1], 1.0)
    with pytest.raises(EmptyTagError):
        unit_square.facets("port")


def test_locate_interior_point(unit_square):
    elements, local = unit_square.locate(np.array([[0.3, 0.6]]))
    assert elements[0] == 9
    np.testing.assert_allclose(local[0], [0.2, 0.4])


def test_locate_shared_edge_picks_lowest_element(unit_square):
    elements, local = unit_square.locate(np.array([[0.25, 0.3], [0.5, 0.5]]))
    assert elements[0] == 4
    np.testing.assert_allclose(local[0], [1.0, 0.2])
    assert elements[1] == 5


def test_locate_outside_raises_with_distance(unit_square):
    with pytest.raises(OutsideDomainError) as info:
        unit_square.locate(np.array([[1.5, 0.5]]))
    assert info.value.distance == pytest.approx(0.5)
    assert info.value.point == (1.5, 0.5)


def test_locate_non_strict_marks_outside(unit_square):
    elements, _ = unit_square.locate(np.array([[0.1, 0.1], [-0.2, 0.4]]), strict=False)
    assert elements[0] == 0
    assert elements[1] == -1
    assert list(unit_square.contains(np.array([[0.1, 0.1], [-0.2, 0.4]]))) == [True, False]


def test_mesh_with_hole():
    xs = np.linspace(0.0, 1.0, 4)
    active = np.ones((3, 3), dtype=bool)
    active[1, 1] = False

    def classify(side, mid):
        inner = 1.0 / 3.0 - 1e-9 < mid[0] < 2.0 / 3.0 + 1e-9 and 1.0 / 3.0 - 1e-9 < mid[1] < 2.0 / 3.0 + 1e-9
        return "hole" if inner else "outer"

    mesh = structured_quad_mesh(xs, xs, degree=2, active=active, classify=classify)
    assert mesh.n_elements == 8
    assert len(mesh.facets("hole")) == 4
    assert len(mesh.facets("outer")) == 12
    assert not mesh.contains(np.array([[0.5, 0.5]]))[0]
    # the hole boundary itself is still inside (within tolerance)
    assert mesh.contains(np.array([[1.0 / 3.0, 0.5]]))[0]


def test_interval_mesh():
    mesh = interval_mesh(np.linspace(-1.0, 0.5, 4))
    assert mesh.dim == 1
    assert mesh.n_nodes == 7
    assert list(mesh.tags["left"][0]) == [0, 0]
    assert list(mesh.tags["right"][0]) == [2, 1]
    elements, local = mesh.locate(np.array([[0.0]]))
    # x = 0 is shared by cells 1 and 2
    assert elements[0] == 1
    np.testing.assert_allclose(local[0], [1.0])


def test_shift_mapped_mesh_keeps_inverse_index(unit_square):
    moved = unit_square.mapped(ShiftMap([2.0, 0.0]))
    assert moved.grid is not None
    elements, local = moved.locate(np.array([[2.3, 0.6]]))
    assert elements[0] == 9
    np.testing.assert_allclose(local[0], [0.2, 0.4])


def test_unstructured_location_matches_structured(unit_square):
    plain = Mesh(unit_square.nodes, unit_square.connectivity, 2, tags=unit_square.tags)
    rng = np.random.default_rng(3)
    points = rng.uniform(0.01, 0.99, size=(20, 2))
    e1, l1 = unit_square.locate(points)
    e2, l2 = plain.locate(points)
    np.testing.assert_array_equal(e1, e2)
    np.testing.assert_allclose(l1, l2, atol=1e-10)
