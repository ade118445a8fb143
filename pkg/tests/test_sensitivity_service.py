import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.exceptions import InvalidInputError
from src.models.sensitivity import (
    ConstantField,
    FixedBallSensitivity,
    FixedConeSensitivity,
    MollificationParams,
    RadialField,
    RotationalField,
    VaryingBallSensitivity,
    VaryingConeSensitivity,
)
from src.services.sensitivity_service import ball_volume, sensitivity_service, shell_volume

EAST = np.array([1.0, 0.0])


def _cone(angle=math.pi / 4, radius=1.0):
    return FixedConeSensitivity(radius=radius, angle=angle, orientation=ConstantField(vector=[1.0, 0.0]))


def _varying_cone():
    return VaryingConeSensitivity(radius=0.5, angle_min=math.pi / 4, steepness=1.0, orientation=RadialField())


def test_ball_volumes():
    assert ball_volume(2) == pytest.approx(math.pi)
    assert ball_volume(3, 2.0) == pytest.approx(32.0 * math.pi / 3.0)
    assert shell_volume(2, 1.0, 0.1) == pytest.approx(math.pi * (1.1 ** 2 - 0.9 ** 2))


def test_ball_indicator_is_closed():
    spec = FixedBallSensitivity(radius=0.3)
    offsets = np.array([[0.3, 0.0], [0.0, 0.2999], [0.3001, 0.0]])
    hits = sensitivity_service.indicator(spec, np.zeros_like(offsets), offsets)
    assert hits.tolist() == [True, True, False]


def test_cone_indicator_tests_angle_and_radius():
    spec = _cone()
    offsets = np.array([[0.5, 0.1], [0.1, 0.5], [0.0, 0.0], [1.2, 0.0], [-0.5, 0.0]])
    w = np.broadcast_to(EAST, offsets.shape)
    assert sensitivity_service.indicator(spec, w, offsets).tolist() == [True, False, True, False, False]


def test_cone_needs_nonzero_orientation():
    with pytest.raises(InvalidInputError):
        sensitivity_service.indicator(_cone(), np.zeros(2), np.array([0.1, 0.0]))


def test_cone_spec_validation():
    with pytest.raises(ValidationError):
        FixedConeSensitivity(radius=1.0, angle=math.pi / 4)
    with pytest.raises(ValidationError):
        FixedConeSensitivity(radius=1.0, angle=math.pi, orientation=ConstantField(vector=[1.0, 0.0]))
    with pytest.raises(ValidationError):
        FixedBallSensitivity(radius=0.3, orientation=ConstantField(vector=[1.0, 0.0, 0.0]))


def test_varying_profiles():
    ball = VaryingBallSensitivity(radius_max=0.5, radius_min=0.2, length_scale=1.0)
    assert float(ball.radius_at(0.0)) == pytest.approx(0.5)
    assert float(ball.radius_at(50.0)) == pytest.approx(0.2)
    assert ball.radius_lipschitz == pytest.approx(0.3)

    cone = _varying_cone()
    angles = cone.angle_at(np.array([0.2, 1.0, 1.5, 3.0, 1e6]))
    assert angles[0] == pytest.approx(math.pi)
    assert angles[1] == pytest.approx(math.pi)
    assert np.all(np.diff(angles[1:]) < 0)
    assert angles[-1] == pytest.approx(math.pi / 4, abs=1e-5)


def test_orientation_fields():
    rotational = RotationalField(scale=2.0, center=[0.5, 0.5])
    np.testing.assert_allclose(rotational.evaluate([1.0, 0.5]), [0.0, 1.0])
    radial = RadialField(scale=1.0, center=[0.5, 0.5])
    np.testing.assert_allclose(radial.evaluate([1.0, 0.5]), [0.5, 0.0])
    assert rotational.lipschitz == 2.0


def test_cone_boundary_distance_uses_lateral_face():
    spec = _cone()
    distance = sensitivity_service.boundary_distance(spec, EAST, np.array([0.5, 0.0]))
    assert float(distance) == pytest.approx(0.5 * math.sin(math.pi / 4))


def test_cone_boundary_distance_outside_the_cap():
    spec = _cone()
    distance = sensitivity_service.boundary_distance(spec, EAST, np.array([2.0, 0.0]))
    assert float(distance) == pytest.approx(1.0)


def test_theta_includes_segment_for_intermediate_orientation():
    spec = _varying_cone()
    w = np.array([0.75, 0.0])
    # R(w) runs from -r u to 2 r (|w| - 1) u, so (-0.375, 0) lies on it
    on_segment = np.array([-0.375, 0.0])
    assert float(sensitivity_service.boundary_distance(spec, w, on_segment)) == pytest.approx(0.125)
    assert float(sensitivity_service.theta_distance(spec, w, on_segment)) == pytest.approx(0.0, abs=1e-12)
    # Outside (1/2, 1) the segment is inactive
    w_far = np.array([0.25, 0.0])
    assert float(sensitivity_service.theta_distance(spec, w_far, on_segment)) == pytest.approx(0.125)


def test_theta_enlargement_rejects_negative_radius():
    with pytest.raises(InvalidInputError):
        sensitivity_service.theta_enlarged_indicator(FixedBallSensitivity(radius=0.3), np.zeros(2), np.zeros(2), -0.1)


def test_mollified_indicator_limits():
    spec = _cone()
    params = MollificationParams(epsilon=0.05, eta=0.05, nodes=5)
    offsets = np.array([[0.5, 0.0], [0.0, 0.9], [1.0, 0.0]])
    w = np.broadcast_to(EAST, offsets.shape)
    values = sensitivity_service.mollified_indicator(spec, params, w, offsets)
    assert values[0] == pytest.approx(1.0)
    assert values[1] == pytest.approx(0.0)
    assert 0.2 < values[2] < 0.8


def test_mollified_ball_matches_spatial_only_version():
    spec = FixedBallSensitivity(radius=0.3)
    params = MollificationParams(epsilon=0.05, eta=0.1, nodes=7)
    offsets = np.array([[0.28, 0.0], [0.1, 0.1], [0.33, 0.0]])
    w = np.zeros_like(offsets)
    np.testing.assert_allclose(
        sensitivity_service.mollified_indicator(spec, params, w, offsets),
        sensitivity_service.mollified_indicator_eps(spec, 0.05, w, offsets, nodes=7))


@pytest.mark.parametrize('spec', [FixedBallSensitivity(radius=0.4), _cone(radius=0.4)])
def test_rope_inequality_on_random_quadruples(spec, rng):
    n = 4000
    x1, y1 = rng.uniform(-0.5, 0.5, size=(2, n, 2))
    x2 = x1 + rng.normal(scale=0.05, size=(n, 2))
    y2 = y1 + rng.normal(scale=0.05, size=(n, 2))
    w = np.broadcast_to(EAST, x1.shape)
    assert np.all(sensitivity_service.rope_inequality_check(spec, w, x1, y1, x2, y2))


def test_mollified_rope_inequality(rng):
    spec = FixedBallSensitivity(radius=0.4)
    n = 300
    x1, y1 = rng.uniform(-0.5, 0.5, size=(2, n, 2))
    x2 = x1 + rng.normal(scale=0.05, size=(n, 2))
    y2 = y1 + rng.normal(scale=0.05, size=(n, 2))
    assert np.all(sensitivity_service.mollified_rope_check(spec, 0.02, np.zeros((n, 2)), x1, y1, x2, y2))


def test_symmetric_difference_of_varying_ball(rng):
    spec = VaryingBallSensitivity(radius_max=0.5, radius_min=0.2, length_scale=1.0)
    w1 = np.array([0.0, 0.0])
    w2 = np.array([1.0, 0.0])
    r2 = 0.2 + 0.3 * math.exp(-1.0)
    exact = math.pi * (0.5 ** 2 - r2 ** 2)
    estimate, se = sensitivity_service.symmetric_difference_measure(spec, w1, w2, 20_000, rng)
    assert abs(estimate - exact) < 5 * se
    same, _ = sensitivity_service.symmetric_difference_measure(spec, w1, w1, 1000, rng)
    assert same == 0.0


def test_symmetric_difference_needs_enough_samples(rng):
    with pytest.raises(InvalidInputError):
        sensitivity_service.symmetric_difference_measure(FixedBallSensitivity(radius=0.3), np.zeros(2), np.zeros(2),
                                                         999, rng)


def test_enlargement_of_ball_boundary_is_a_shell(rng):
    spec = FixedBallSensitivity(radius=0.4)
    estimate, se = sensitivity_service.enlargement_measure(spec, np.zeros(2), 0.05, 40_000, rng)
    assert abs(estimate - shell_volume(2, 0.4, 0.05)) < 5 * se


@pytest.mark.parametrize('spec, w', [
    (FixedBallSensitivity(radius=0.4), np.zeros(2)),
    (_cone(), EAST),
    (_varying_cone(), np.array([0.75, 0.0])),
    (_varying_cone(), np.array([2.0, 0.0])),
])
def test_theta_samples_lie_on_theta(spec, w, rng):
    points = sensitivity_service.sample_theta(spec, w, 500, rng)
    distance = sensitivity_service.theta_distance(spec, np.broadcast_to(w, points.shape), points)
    assert np.max(distance) < 1e-9


def test_containment_radius_grows_with_orientation_gap(rng):
    spec = _varying_cone()
    near = sensitivity_service.theta_containment_radius(spec, np.array([2.0, 0.0]), np.array([2.0, 0.05]), 2000, rng)
    far = sensitivity_service.theta_containment_radius(spec, np.array([2.0, 0.0]), np.array([2.0, 0.5]), 2000, rng)
    assert 0.0 < near < far


def test_fit_linear_constant_flags_upward_jumps():
    scales = [0.2, 0.1, 0.05]
    clean = sensitivity_service.fit_linear_constant(scales, [0.4, 0.2, 0.1], [0.001] * 3)
    assert clean['constant'] == pytest.approx(2.0)
    assert clean['violations'] == []

    rough = sensitivity_service.fit_linear_constant(scales, [0.4, 0.2, 0.5], [0.001] * 3)
    assert len(rough['violations']) == 1
    assert rough['violations'][0]['scale'] == 0.05


def test_mollification_error_is_below_the_double_shell(rng):
    spec = FixedBallSensitivity(radius=0.5)
    report = sensitivity_service.mollification_bound_check(spec, EAST, [0.2, 0.1, 0.05], 20_000, rng)
    rows = report['rows']
    assert [row['epsilon'] for row in rows] == [0.2, 0.1, 0.05]
    for row in rows:
        assert row['shell'] == pytest.approx(shell_volume(2, 0.5, 2 * row['epsilon']))
        assert 0.0 < row['error'] <= row['shell'] + 3 * row['error_se']
    # The error shrinks with the mollifier width
    assert rows[0]['error'] > rows[1]['error'] > rows[2]['error']
    assert report['violations'] == []
    assert report['orientation_gap'] is None


def test_cone_mollification_reports_orientation_gap(rng):
    report = sensitivity_service.mollification_bound_check(_cone(radius=0.5), EAST, [0.1], 4000, rng)
    assert report['violations'] == []
    assert report['rows'][0]['shell_se'] > 0.0
    assert 0.0 <= report['orientation_gap'] < report['rows'][0]['shell']
    direct, se = sensitivity_service.mollification_error_integral(_cone(radius=0.5), 0.1, EAST, 4000, rng)
    assert direct > 0.0 and se > 0.0
