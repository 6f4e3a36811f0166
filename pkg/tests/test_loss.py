import numpy as np
import pytest

from analytic import pulsating_sphere
from errors import ConfigError, NonFiniteObjectiveError, NormalizationError
from loss import (
    DirectivityLoss,
    LossSpec,
    MagnitudeLoss,
    ObservationLayout,
    _loss_terms,
    directivity,
    mse_loss,
)


def on_target(spec, F=1):
    """Directivity that meets every target exactly."""
    angles = spec.angles
    D = np.zeros((F, 3, len(angles)))
    for p, plane in enumerate(("horizontal", "vertical", "diagonal")):
        inside = angles <= spec.coverage(plane) + 1e-9
        D[:, p] = np.where(inside, spec.t_in, spec.t_out)
    return D


def random_fields(spec, F, seed=0):
    rng = np.random.default_rng(seed)
    M = len(ObservationLayout.for_spec(spec).points)
    return rng.normal(size=(F, M)) + 1j * rng.normal(size=(F, M))


def test_on_axis_is_zero_db():
    spec = LossSpec((1000.0,), step_deg=5.0)
    loss = DirectivityLoss(spec)
    D = loss.directivity(random_fields(spec, 2))
    # theta = 0 on every arc coincides with the on-axis point
    fields = random_fields(spec, 1)
    fields[0, 1::len(spec.angles)] = fields[0, 0]
    np.testing.assert_allclose(loss.directivity(fields)[0, :, 0], 0.0, atol=1e-12)
    assert D.shape == (2, 3, len(spec.angles))


def test_half_pressure_is_minus_six_db():
    D = directivity(np.array([[0.5 + 0.0j, -0.5j]]), np.array([1.0 - 0.0j]))
    np.testing.assert_allclose(D, -6.0206, atol=1e-4)


def test_monopole_is_omnidirectional():
    spec = LossSpec((1000.0,), step_deg=5.0, radius=3.0)
    loss = DirectivityLoss(spec)
    p = pulsating_sphere(0.2, 4.0, 1.0, loss.points)
    np.testing.assert_allclose(loss.directivity(p[None, :]), 0.0, atol=1e-9)


def test_layout_order():
    spec = LossSpec((1000.0,), step_deg=10.0, radius=2.0)
    points = ObservationLayout.for_spec(spec).points
    n = len(spec.angles)
    assert points.shape == (1 + 3 * n, 3)
    np.testing.assert_allclose(points[0], [0.0, 0.0, 2.0])
    np.testing.assert_allclose(np.linalg.norm(points, axis=1), 2.0)
    # last sample of each arc lies in the z = 0 plane at azimuth 0, 90, 45
    np.testing.assert_allclose(points[n], [2.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(points[2 * n], [0.0, 2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(points[3 * n], [np.sqrt(2.0), np.sqrt(2.0), 0.0], atol=1e-12)


def test_single_sample_off_target():
    spec = LossSpec((1000.0,))
    D = on_target(spec)
    assert mse_loss(D, spec) == 0.0
    D[0, 0, 10] += 2.0
    assert mse_loss(D, spec) == pytest.approx(4.0 / 36.0)


def test_diagonal_arc_only_penalises_out_of_coverage():
    spec = LossSpec((1000.0,))
    D = on_target(spec)
    D[0, 2, 0] = 7.0
    assert mse_loss(D, spec) == 0.0
    assert spec.coverage_v < spec.coverage_d < spec.coverage_h


def test_weights_and_frequency_average():
    spec = LossSpec((500.0, 1000.0), weight_h=3.0)
    D = on_target(spec, F=2)
    D[1, 0, 0] += 2.0
    assert mse_loss(D, spec) == pytest.approx(3.0 * 4.0 / (2 * 36.0))


def test_scaling_fields_leaves_loss_unchanged():
    spec = LossSpec((1000.0, 2000.0), step_deg=5.0)
    loss = DirectivityLoss(spec)
    fields = random_fields(spec, 2)
    value, _ = loss.value_and_cotangent(fields)
    scaled, _ = loss.value_and_cotangent(fields * np.array([[3.0 - 1.0j], [0.01j]]))
    assert scaled == pytest.approx(value, rel=1e-10)


def test_directivity_cotangent_matches_finite_differences():
    spec = LossSpec((1000.0, 2000.0), step_deg=10.0)
    loss = DirectivityLoss(spec)
    fields = random_fields(spec, 2, seed=3)
    _, cot = loss.value_and_cotangent(fields)
    rng = np.random.default_rng(4)
    for _ in range(5):
        dp = rng.normal(size=fields.shape) + 1j * rng.normal(size=fields.shape)
        h = 1e-6
        fd = (loss.value_and_cotangent(fields + h * dp)[0] - loss.value_and_cotangent(fields - h * dp)[0]) / (2 * h)
        assert np.real(np.sum(np.conj(cot) * dp)) == pytest.approx(fd, rel=1e-6, abs=1e-7)


def test_magnitude_cotangent_matches_finite_differences():
    rng = np.random.default_rng(5)
    fields = rng.normal(size=(2, 7)) + 1j * rng.normal(size=(2, 7))
    loss = MagnitudeLoss(np.zeros((7, 3)), rng.random((2, 7)), (100.0, 200.0))
    _, cot = loss.value_and_cotangent(fields)
    dp = rng.normal(size=fields.shape) + 1j * rng.normal(size=fields.shape)
    h = 1e-6
    fd = (loss.value_and_cotangent(fields + h * dp)[0] - loss.value_and_cotangent(fields - h * dp)[0]) / (2 * h)
    assert np.real(np.sum(np.conj(cot) * dp)) == pytest.approx(fd, rel=1e-6)


def test_plane_order_does_not_change_the_value():
    spec = LossSpec((1000.0,), step_deg=5.0)
    D = on_target(spec) + np.random.default_rng(6).normal(size=(1, 3, len(spec.angles)))
    swapped = D[:, [1, 0, 2]]
    value, _ = _loss_terms(D, spec)
    assert _loss_terms(swapped, spec, ("vertical", "horizontal", "diagonal"))[0] == pytest.approx(value)


def test_vanishing_on_axis_pressure():
    spec = LossSpec((1000.0,), step_deg=10.0)
    fields = random_fields(spec, 1)
    fields[0, 0] = 0.0
    with pytest.raises(NormalizationError):
        DirectivityLoss(spec).value_and_cotangent(fields)


def test_zero_off_axis_pressure_is_not_finite():
    spec = LossSpec((1000.0,), step_deg=10.0)
    fields = random_fields(spec, 1)
    fields[0, 3] = 0.0
    with pytest.raises(NonFiniteObjectiveError):
        DirectivityLoss(spec).value_and_cotangent(fields)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(frequencies=()),
        dict(frequencies=(-1.0,)),
        dict(t_in=1.0),
        dict(t_in=-12.0),
        dict(coverage_h=0.0),
        dict(coverage_v=95.0),
        dict(step_deg=0.0),
        dict(span_deg=20.0),
    ],
)
def test_invalid_spec(kwargs):
    kwargs.setdefault("frequencies", (1000.0,))
    with pytest.raises(ConfigError):
        LossSpec(**kwargs)
