import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from errors import DegenerateElementError, InvalidGeometryError, MeshParseError, NonTriangleError
from mesh import (
    AdjacencyClass,
    Mesh,
    ShapeParams,
    classify_pairs,
    deform,
    deform_vertices,
    image_reflections,
    load_mesh,
    make_icosphere,
    make_radiator,
    vertex_tangents,
    write_obj,
)

TETRA_MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
7
1 15 2 0 1 1
2 1 2 0 1 1 2
3 2 2 7 1 1 3 2
4 2 2 7 1 1 2 4
5 2 2 7 1 1 4 3
6 2 2 8 1 2 3 4
7 1 2 0 1 3 4
$EndElements
"""


@pytest.mark.parametrize("level", [0, 1, 2])
def test_icosphere_counts_and_orientation(level):
    mesh = make_icosphere(level, 2.0)
    assert mesh.n_elements == 20 * 4**level
    assert mesh.is_watertight()
    assert np.all(np.einsum("ij,ij->i", mesh.normals, mesh.centroids) > 0)
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 2.0)


def test_icosphere_volume_approaches_ball():
    assert make_icosphere(3, 1.0).signed_volume() == pytest.approx(4.0 * np.pi / 3.0, rel=2e-2)


def test_icosphere_rejects_bad_levels():
    with pytest.raises(ValueError):
        make_icosphere(8, 1.0)
    with pytest.raises(ValueError):
        make_icosphere(1, 0.0)


def test_radiator_is_closed_and_tagged(radiator):
    assert radiator.n_elements == 80
    assert radiator.is_watertight()
    assert radiator.signed_volume() > 0
    assert int(np.sum(radiator.tags == 1)) == 8
    front = radiator.centroids[radiator.tags == 1]
    np.testing.assert_allclose(front[:, 2], 0.3)
    np.testing.assert_allclose(radiator.normals[radiator.tags == 1], [[0.0, 0.0, 1.0]] * 8, atol=1e-12)


def test_quadrant_radiator_leaves_symmetry_cuts_open():
    quadrant = make_radiator(0.3, 0.05, 0.15, 4, 3, quadrant=True)
    assert quadrant.n_elements == 2 * 4 * 3 + 2 * 3
    assert not quadrant.is_watertight()
    assert quadrant.vertices[:, 0].min() >= -1e-15
    assert quadrant.vertices[:, 1].min() >= -1e-15


def test_obj_roundtrip_keeps_tags(tmp_path, radiator):
    path = write_obj(radiator, tmp_path / "radiator.obj")
    loaded = load_mesh(path)
    np.testing.assert_array_equal(loaded.vertices, radiator.vertices)
    np.testing.assert_array_equal(loaded.elements, radiator.elements)
    np.testing.assert_array_equal(loaded.tags, radiator.tags)


def test_obj_rejects_quads_and_bad_lines(tmp_path):
    quad = tmp_path / "quad.obj"
    quad.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(NonTriangleError) as err:
        load_mesh(quad)
    assert err.value.line_number == 5

    broken = tmp_path / "broken.obj"
    broken.write_text("v 0 0 0\nv 1 0\nf 1 2 3\n")
    with pytest.raises(MeshParseError) as err:
        load_mesh(broken)
    assert err.value.line_number == 2


@pytest.mark.parametrize("face", ["f 0 1 2", "f 1 2 4", "f -4 1 2"])
def test_obj_rejects_face_indices_outside_the_vertex_list(tmp_path, face):
    path = tmp_path / "bad_index.obj"
    path.write_text(f"v 0 0 0\nv 1 0 0\nv 0 1 0\n{face}\n")
    with pytest.raises(MeshParseError) as err:
        load_mesh(path)
    assert not isinstance(err.value, NonTriangleError)
    assert err.value.line_number == 4


def test_msh2_skips_points_and_lines(tmp_path):
    path = tmp_path / "tetra.msh"
    path.write_text(TETRA_MSH)
    mesh = load_mesh(path)
    assert mesh.n_elements == 4
    assert mesh.n_vertices == 4
    assert list(mesh.tags) == [7, 7, 7, 8]
    assert mesh.is_watertight()


def test_msh2_rejects_quads(tmp_path):
    path = tmp_path / "quad.msh"
    path.write_text(TETRA_MSH.replace("6 2 2 8 1 2 3 4", "6 3 2 8 1 1 2 3 4"))
    with pytest.raises(NonTriangleError):
        load_mesh(path)


def test_degenerate_element_is_reported():
    mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 3], [0, 1, 2]]))
    with pytest.raises(DegenerateElementError) as err:
        mesh.validate()
    assert err.value.element == 1


def test_classification_of_sphere(sphere80):
    pairs = classify_pairs(sphere80)
    classes = pairs.classes
    np.testing.assert_array_equal(classes, classes.T)
    assert np.all(np.diag(classes) == AdjacencyClass.SELF)
    counts = pairs.counts()
    assert counts["SELF"] == 80
    assert counts["SHARED_EDGE"] == 3 * 80
    assert counts["REGULAR_FAR"] > 0
    assert pairs.of(0, 0) is AdjacencyClass.SELF


def test_near_factor_moves_pairs_between_regular_classes(sphere80):
    tight = classify_pairs(sphere80, near_factor=0.5).counts()
    loose = classify_pairs(sphere80, near_factor=10.0).counts()
    assert tight["REGULAR_NEAR"] < loose["REGULAR_NEAR"]
    assert loose["REGULAR_FAR"] == 0


def test_image_reflections():
    assert image_reflections(()) == []
    images = image_reflections(("x", "y"))
    assert len(images) == 3
    assert {tuple(f) for f in images} == {(-1.0, 1.0, 1.0), (1.0, -1.0, 1.0), (-1.0, -1.0, 1.0)}
    with pytest.raises(ValueError):
        image_reflections(("w",))


def test_classification_carries_one_block_per_image():
    quadrant = make_radiator(0.3, 0.05, 0.15, 3, 3, quadrant=True)
    pairs = classify_pairs(quadrant, symmetry=("x", "y"))
    assert len(pairs.image_classes) == 3
    assert all(block.shape == (quadrant.n_elements,) * 2 for block in pairs.image_classes)


def test_zero_parameters_leave_mesh_unchanged(radiator):
    params = ShapeParams.uniform(radiator, 4)
    np.testing.assert_array_equal(deform(radiator, params).vertices, radiator.vertices)


def test_vertex_tangents_match_linear_deformation(radiator):
    params = ShapeParams.uniform(radiator, 4, n_sectors=3)
    tangents = vertex_tangents(radiator, params)
    assert tangents.shape == (12, radiator.n_vertices, 3)
    for j in (0, 5, 11):
        e = np.zeros(params.size)
        e[j] = 1.0
        moved = deform_vertices(radiator, params.with_values(e)) - radiator.vertices
        np.testing.assert_allclose(tangents[j], moved, atol=1e-14)


def test_deformation_follows_a_clamped_spline_of_the_knot_values(radiator):
    params = ShapeParams.uniform(radiator, 4).with_values([0.01, -0.02, 0.03, 0.015])
    moved = deform(radiator, params).vertices - radiator.vertices
    x, y, z = radiator.vertices.T
    rho = np.hypot(x, y)
    envelope = np.array([rho[np.isclose(z, zi)].max() for zi in z])
    offset = CubicSpline(params.knots, params.values, bc_type="clamped")(z)
    expected = np.zeros_like(moved)
    ring = envelope > 0
    expected[ring, 0] = offset[ring] * x[ring] / envelope[ring]
    expected[ring, 1] = offset[ring] * y[ring] / envelope[ring]
    np.testing.assert_allclose(moved, expected, atol=1e-12)


def test_deformation_keeps_axis_vertices_on_axis(radiator):
    params = ShapeParams.uniform(radiator, 4).with_values([0.01, -0.02, 0.03, 0.01])
    moved = deform(radiator, params)
    on_axis = np.hypot(radiator.vertices[:, 0], radiator.vertices[:, 1]) == 0
    np.testing.assert_array_equal(moved.vertices[on_axis], radiator.vertices[on_axis])


def test_collapsing_deformation_raises(radiator):
    params = ShapeParams.uniform(radiator, 4).with_values([-0.05, 0.0, 0.0, 0.0])
    with pytest.raises(InvalidGeometryError):
        deform(radiator, params)


def test_shape_params_validation(radiator):
    with pytest.raises(ValueError):
        ShapeParams(np.zeros(3), np.linspace(0, 1, 4))
    with pytest.raises(ValueError):
        ShapeParams(np.array([0.5, 0, 0, 0]), np.linspace(0, 1, 4), upper=0.1)
    with pytest.raises(ValueError):
        ShapeParams(np.zeros(2), np.array([1.0, 0.0]))
    assert ShapeParams.uniform(radiator, 0).size == 0
