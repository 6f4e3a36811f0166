import numpy as np
import pytest

from analytic import MieConfig, mie_scattered, pulsating_sphere
from bem_core import (
    BoundaryCondition,
    Formulation,
    QuadraturePlan,
    WaveConfig,
    assemble,
    evaluate_potential,
    greens,
    greens_dn,
    incident_plane_wave,
    locate_resonance,
    panel_integrals,
    potential_matrix,
    smallest_singular_value,
    winding_numbers,
)
from conftest import piston, plane_wave
from errors import CoincidentPointsError
from field_io import fibonacci_sphere
from mesh import Mesh, ShapeParams, classify_pairs, deform, make_radiator, panel_geometry, vertex_tangents
from quadrature import edge_rule, gauss_low, polar_singular
from solver import SolveConfig, gmres_solve

TIGHT = SolveConfig(tol=1e-10)


def solve(mesh, cfg, classes=None):
    classes = classes or classify_pairs(mesh, symmetry=cfg.symmetry)
    A = assemble(mesh, cfg, classes)
    return A, gmres_solve(A, A.rhs, TIGHT)


def test_greens_function_values():
    r, rp = np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 2.0])
    assert greens(r, rp, 1.5) == pytest.approx(np.exp(3j) / (8 * np.pi))
    assert greens(r, rp, 1.5) == pytest.approx(greens(rp, r, 1.5))
    # moving the source along +z (its normal) increases the distance
    expected = (1.5j - 0.5) * np.exp(3j) / (8 * np.pi)
    assert greens_dn(r, rp, np.array([0.0, 0.0, 1.0]), 1.5) == pytest.approx(expected)
    with pytest.raises(CoincidentPointsError):
        greens(r, r, 1.0)


def test_wave_config_validation():
    with pytest.raises(ValueError):
        plane_wave(0.0)
    with pytest.raises(ValueError):
        WaveConfig(1.0)
    with pytest.raises(ValueError):
        WaveConfig(1.0, bc=BoundaryCondition.NEUMANN_RADIATION)
    with pytest.raises(ValueError):
        plane_wave(1.0, formulation=Formulation.CHIEF)
    with pytest.raises(ValueError):
        WaveConfig(1.0, incident=incident_plane_wave([0.0, 0.0, 1.0], 1.0, 2.0))
    with pytest.raises(ValueError):
        WaveConfig(1.0, incident=incident_plane_wave([1.0, 0.0, 0.0], 1.0, 1.0), symmetry=("x",))
    assert plane_wave(2.0).eta == pytest.approx(0.5j)
    assert plane_wave(2.0, coupling=1j).eta == 1j
    assert plane_wave(2.0).at(3.0).incident.k == 3.0


def test_far_panel_integral_is_midpoint_like():
    corners = np.array([[[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.0, 0.01, 0.0]]])
    panels = panel_geometry(corners.reshape(3, 3), np.array([[0, 1, 2]]))
    x = np.array([[0.3, 0.2, 5.0]])
    plan = QuadraturePlan(gauss_low(), edge_rule(3), False)
    values = panel_integrals(x, np.array([[0.0, 0.0, 1.0]]), panels, 2.0, plan, need_kp=True, need_hyper=True)
    centroid = corners[0].mean(axis=0)
    area = 0.5e-4
    assert values.S[0] == pytest.approx(area * greens(x[0], centroid, 2.0), rel=1e-4)
    assert values.K[0] == pytest.approx(area * greens_dn(x[0], centroid, np.array([0.0, 0.0, 1.0]), 2.0), rel=1e-3)


def test_self_panel_single_layer_static_limit():
    corners = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.4, 0.8, 0.0]])
    panels = panel_geometry(corners, np.array([[0, 1, 2]]))
    x = corners.mean(axis=0)[None, :]
    plan = QuadraturePlan(polar_singular(16), edge_rule(8, 4), True)
    values = panel_integrals(x, panels.normals, panels, 1e-6, plan)
    total = 0.0
    for m in range(3):
        a, b = corners[m], corners[(m + 1) % 3]
        e = (b - a) / np.linalg.norm(b - a)
        foot = a + np.dot(x[0] - a, e) * e
        h = np.linalg.norm(x[0] - foot)
        total += h * (np.arcsinh(np.dot(b - foot, e) / h) - np.arcsinh(np.dot(a - foot, e) / h))
    assert values.S[0].real == pytest.approx(total / (4 * np.pi), rel=1e-5)
    assert values.K[0] == pytest.approx(0.0, abs=1e-14)


def test_double_layer_rows_sum_to_half_solid_angle(sphere320):
    cfg = plane_wave(1e-4, formulation=Formulation.CONVENTIONAL)
    A = assemble(sphere320, cfg, classify_pairs(sphere320))
    # 1/2 I - K applied to a constant: the closed surface subtends half the solid angle at each centroid
    np.testing.assert_allclose(A.entries.sum(axis=1).real, 1.0, atol=1e-2)


def test_threads_do_not_change_the_operator(sphere320):
    cfg = plane_wave(2.0)
    classes = classify_pairs(sphere320)
    serial = assemble(sphere320, cfg, classes, threads=1)
    parallel = assemble(sphere320, cfg, classes, threads=4)
    np.testing.assert_array_equal(serial.entries, parallel.entries)
    np.testing.assert_array_equal(serial.rhs, parallel.rhs)


@pytest.mark.parametrize("formulation", [Formulation.CONVENTIONAL, Formulation.BURTON_MILLER])
def test_rigid_sphere_matches_mie(sphere320, formulation):
    cfg = plane_wave(2.0, formulation=formulation)
    _, solution = solve(sphere320, cfg)
    points = fibonacci_sphere(40, 2.0)
    bem = evaluate_potential(sphere320, cfg, solution, points)
    mie = mie_scattered(MieConfig(1.0, 2.0), points)
    assert np.mean(np.abs(bem - mie)) / np.mean(np.abs(mie)) < 5e-2


def test_chief_rows_make_a_least_squares_system(sphere320):
    interior = [[0.1, 0.0, 0.05], [-0.2, 0.15, 0.0], [0.0, -0.1, -0.3]]
    cfg = plane_wave(2.0, formulation=Formulation.CHIEF, chief_points=interior)
    A, solution = solve(sphere320, cfg)
    assert A.entries.shape == (323, 320)
    assert A.least_squares
    points = fibonacci_sphere(40, 2.0)
    bem = evaluate_potential(sphere320, cfg, solution, points)
    mie = mie_scattered(MieConfig(1.0, 2.0), points)
    assert np.mean(np.abs(bem - mie)) / np.mean(np.abs(mie)) < 5e-2


def test_chief_point_outside_is_rejected(sphere80):
    cfg = plane_wave(2.0, formulation=Formulation.CHIEF, chief_points=[[0.0, 0.0, 3.0]])
    with pytest.raises(ValueError):
        assemble(sphere80, cfg, classify_pairs(sphere80))


def test_winding_numbers(sphere80):
    w = winding_numbers(sphere80, [[0.0, 0.0, 0.0], [0.2, -0.3, 0.1], [3.0, 0.0, 0.0]])
    np.testing.assert_allclose(w, [1.0, 1.0, 0.0], atol=1e-9)


def test_pulsating_sphere_radiation(sphere320):
    cfg = WaveConfig(1.0, bc=BoundaryCondition.NEUMANN_RADIATION, velocity=np.ones(320))
    _, solution = solve(sphere320, cfg)
    points = fibonacci_sphere(30, 3.0)
    bem = evaluate_potential(sphere320, cfg, solution, points)
    exact = pulsating_sphere(1.0, 1.0, 1.0, points)
    assert np.mean(np.abs(bem - exact) / np.abs(exact)) < 8e-2


def test_zero_incident_amplitude_gives_zero_field(sphere80):
    cfg = WaveConfig(2.0, incident=incident_plane_wave([0.0, 0.0, 1.0], 0.0, 2.0))
    _, solution = solve(sphere80, cfg)
    assert solution.iterations == 0
    np.testing.assert_array_equal(evaluate_potential(sphere80, cfg, solution, [[0.0, 0.0, 2.0]]), 0.0)


def test_quadrant_images_reproduce_full_radiator():
    full = make_radiator(0.3, 0.05, 0.15, 3, 16)
    quadrant = make_radiator(0.3, 0.05, 0.15, 3, 4, quadrant=True)
    k = 10.0
    point = np.array([[0.4, 0.25, 0.8]])
    p_full = evaluate_potential(full, piston(full, k), solve(full, piston(full, k))[1], point)
    sym = piston(quadrant, k, symmetry=("x", "y"))
    p_quadrant = evaluate_potential(quadrant, sym, solve(quadrant, sym)[1], point)
    assert p_quadrant[0] == pytest.approx(p_full[0], rel=2e-2)


@pytest.mark.parametrize("formulation", [Formulation.CONVENTIONAL, Formulation.BURTON_MILLER])
def test_assembly_tangents_match_finite_differences(radiator, formulation):
    params = ShapeParams.uniform(radiator, 3)
    cfg = piston(radiator, 12.0, formulation=formulation)
    classes = classify_pairs(radiator)
    A = assemble(radiator, cfg, classes, vertex_tangents=vertex_tangents(radiator, params))
    assert A.d_entries.shape == (3, 80, 80)
    h = 1e-6
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        plus = assemble(deform(radiator, params.with_values(step)), cfg, classes)
        minus = assemble(deform(radiator, params.with_values(-step)), cfg, classes)
        fd_entries = (plus.entries - minus.entries) / (2 * h)
        fd_rhs = (plus.rhs - minus.rhs) / (2 * h)
        scale = np.abs(fd_entries).max()
        np.testing.assert_allclose(A.d_entries[j], fd_entries, atol=1e-5 * scale)
        np.testing.assert_allclose(A.d_rhs[j], fd_rhs, atol=1e-5 * np.abs(fd_rhs).max() + 1e-12)


def test_potential_matrix_tangents(radiator):
    params = ShapeParams.uniform(radiator, 2)
    cfg = piston(radiator, 8.0)
    points = np.array([[0.0, 0.0, 1.0], [0.5, 0.0, 0.5]])
    pm = potential_matrix(radiator, cfg, points, vertex_tangents(radiator, params))
    h = 1e-6
    plus = potential_matrix(deform(radiator, params.with_values([h, 0.0])), cfg, points)
    minus = potential_matrix(deform(radiator, params.with_values([-h, 0.0])), cfg, points)
    fd = (plus.double_layer - minus.double_layer) / (2 * h)
    np.testing.assert_allclose(pm.d_double_layer[0], fd, atol=1e-6 * np.abs(fd).max())
    np.testing.assert_allclose(pm.d_offset[0], (plus.offset - minus.offset) / (2 * h), rtol=1e-5, atol=1e-10)


def test_greens_normal_derivative_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(20):
        r = rng.normal(size=3)
        offset = rng.normal(size=3)
        rp = r + offset / np.linalg.norm(offset) * rng.uniform(0.3, 2.0)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        k = rng.uniform(0.5, 5.0)
        fd = (greens(r, rp + h * n, k) - greens(r, rp - h * n, k)) / (2 * h)
        assert greens_dn(r, rp, n, k) == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_incident_normal_derivative_matches_finite_differences():
    rng = np.random.default_rng(5)
    direction = rng.normal(size=3)
    incident = incident_plane_wave(direction / np.linalg.norm(direction), 1.3 - 0.4j, 3.7)
    points = rng.uniform(-1.0, 1.0, size=(12, 3))
    normals = rng.normal(size=(12, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    h = 1e-6
    fd = (incident(points + h * normals) - incident(points - h * normals)) / (2 * h)
    np.testing.assert_allclose(incident.normal_derivative(points, normals), fd, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("formulation", [Formulation.CONVENTIONAL, Formulation.BURTON_MILLER])
def test_assembly_commutes_with_element_order(radiator, formulation):
    perm = np.random.default_rng(7).permutation(radiator.n_elements)
    shuffled = Mesh(radiator.vertices, radiator.elements[perm], radiator.tags[perm])
    A = assemble(radiator, piston(radiator, 12.0, formulation=formulation), classify_pairs(radiator))
    B = assemble(shuffled, piston(shuffled, 12.0, formulation=formulation), classify_pairs(shuffled))
    scale = np.abs(A.entries).max()
    np.testing.assert_allclose(B.entries, A.entries[np.ix_(perm, perm)], rtol=1e-12, atol=1e-12 * scale)
    np.testing.assert_allclose(B.rhs, A.rhs[perm], rtol=1e-12, atol=1e-12 * np.abs(A.rhs).max())


def test_resonance_is_located_where_the_conventional_operator_degenerates(sphere80):
    classes = classify_pairs(sphere80)
    k_star, sigma = locate_resonance(sphere80, plane_wave(np.pi), classes, np.pi - 0.5, np.pi + 0.5)
    # the inscribed polyhedron resonates above ka = pi
    assert np.pi < k_star < np.pi + 0.5
    conventional = plane_wave(2.5, formulation=Formulation.CONVENTIONAL)
    assert sigma < 0.1 * smallest_singular_value(assemble(sphere80, conventional, classes))


def test_burton_miller_stays_well_conditioned_at_resonance(sphere80):
    classes = classify_pairs(sphere80)
    k_star, _ = locate_resonance(sphere80, plane_wave(np.pi), classes, np.pi - 0.5, np.pi + 0.5)

    def condition(k, formulation):
        return np.linalg.cond(assemble(sphere80, plane_wave(k, formulation=formulation), classes).entries)

    assert condition(k_star, Formulation.CONVENTIONAL) > 10 * condition(2.5, Formulation.CONVENTIONAL)
    assert condition(k_star, Formulation.BURTON_MILLER) < 3 * condition(2.5, Formulation.BURTON_MILLER)
    assert condition(k_star, Formulation.BURTON_MILLER) < condition(k_star, Formulation.CONVENTIONAL)


def test_resonance_bracket_must_be_ordered(sphere80):
    with pytest.raises(ValueError):
        locate_resonance(sphere80, plane_wave(np.pi), classify_pairs(sphere80), 3.3, 3.0)
