import math

import numpy as np
import pytest

from src.exceptions import ConfigurationError, InvalidInputError
from src.models.domain import unit_box
from src.models.kernel import GaussianGradKernel, zero_kernel
from src.models.particles import ParticleCloud
from src.models.pde import GridDensity
from src.models.sensitivity import (
    ConstantField,
    FixedBallSensitivity,
    FixedConeSensitivity,
    MollificationParams,
    RotationalField,
    VaryingConeSensitivity,
)
from src.services.sensitivity_service import sensitivity_service
from src.services.velocity_service import velocity_service


def _cloud(rng, n=200):
    return ParticleCloud.from_positions(rng.random((n, 2)))


def _brute_force(x, positions, spec, kernel):
    out = np.zeros(2)
    w = spec.orientation_at(x)
    for y in positions:
        if sensitivity_service.indicator(spec, w, y - x):
            out += kernel.gradient(x - y)
    return out / positions.shape[0]


def test_empirical_velocity_matches_pairwise_loop(rng, ball_spec, gaussian_kernel):
    cloud = _cloud(rng, 60)
    fast = velocity_service.velocity_empirical(cloud.positions, cloud, ball_spec, gaussian_kernel)
    for i in range(0, 60, 7):
        np.testing.assert_allclose(fast[i], _brute_force(cloud.positions[i], cloud.positions, ball_spec,
                                                         gaussian_kernel), atol=1e-14)


def test_empirical_velocity_with_rotating_cone(rng, gaussian_kernel):
    spec = VaryingConeSensitivity(radius=0.4, angle_min=math.pi / 4,
                                  orientation=RotationalField(scale=3.0, center=[0.5, 0.5], offset=[0.1, 0.0]))
    cloud = _cloud(rng, 50)
    fast = velocity_service.velocity_empirical(cloud.positions, cloud, spec, gaussian_kernel)
    for i in (0, 13, 49):
        np.testing.assert_allclose(fast[i], _brute_force(cloud.positions[i], cloud.positions, spec,
                                                         gaussian_kernel), atol=1e-14)


def test_binned_sum_is_bit_identical(rng, ball_spec, gaussian_kernel):
    cloud = _cloud(rng, 300)
    naive = velocity_service.velocity_empirical(cloud.positions, cloud, ball_spec, gaussian_kernel)
    binned = velocity_service.velocity_empirical_binned(cloud.positions, cloud, ball_spec, gaussian_kernel, 0.3)
    np.testing.assert_array_equal(naive, binned)


def test_binned_sum_needs_wide_bins(rng, ball_spec, gaussian_kernel):
    with pytest.raises(ConfigurationError):
        velocity_service.velocity_empirical_binned(np.zeros(2), _cloud(rng), ball_spec, gaussian_kernel, 0.2)


def test_velocity_is_permutation_equivariant(rng, ball_spec, gaussian_kernel):
    cloud = _cloud(rng, 120)
    order = rng.permutation(120)
    v = velocity_service.velocity_empirical(cloud.positions, cloud, ball_spec, gaussian_kernel)
    shuffled = cloud.permuted(order)
    v_shuffled = velocity_service.velocity_empirical(shuffled.positions, shuffled, ball_spec, gaussian_kernel)
    np.testing.assert_allclose(v_shuffled, v[order], atol=1e-13)


def test_single_point_query_returns_vector(rng, ball_spec, gaussian_kernel):
    value = velocity_service.velocity_empirical(np.array([0.5, 0.5]), _cloud(rng), ball_spec, gaussian_kernel)
    assert value.shape == (2,)
    with pytest.raises(InvalidInputError):
        velocity_service.velocity_empirical(np.zeros(3), _cloud(rng), ball_spec, gaussian_kernel)


def test_zero_kernel_gives_zero_velocity(rng, ball_spec):
    cloud = _cloud(rng, 40)
    np.testing.assert_array_equal(velocity_service.velocity_empirical(cloud.positions, cloud, ball_spec,
                                                                      zero_kernel()), 0.0)


def test_spike_density_velocity(gaussian_kernel):
    box = unit_box(2)
    values = np.zeros((10, 10))
    values[7, 5] = 100.0
    density = GridDensity(domain=box, values=values)
    center = np.array([0.75, 0.55])
    x = np.array([0.6, 0.5])
    spec = FixedBallSensitivity(radius=0.3)
    expected = gaussian_kernel.gradient(x - center) * density.mass
    np.testing.assert_allclose(velocity_service.velocity_from_density(x, density, spec, gaussian_kernel), expected)
    # Out of range of the sensitivity ball
    far = np.array([0.05, 0.05])
    np.testing.assert_array_equal(velocity_service.velocity_from_density(far, density, spec, gaussian_kernel), 0.0)


@pytest.mark.parametrize('spec', [
    FixedBallSensitivity(radius=0.3),
    FixedConeSensitivity(radius=0.35, angle=math.pi / 3, orientation=ConstantField(vector=[0.0, 1.0])),
])
def test_fft_grid_velocity_matches_direct_sum(rng, spec, gaussian_kernel):
    density = GridDensity(domain=unit_box(2), values=rng.random((12, 12)))
    via_stencil = velocity_service.velocity_on_grid(density, spec, gaussian_kernel)
    direct = velocity_service.velocity_from_density(density.centers, density, spec, gaussian_kernel)
    np.testing.assert_allclose(via_stencil.reshape(-1, 2), direct, atol=1e-12)


def test_grid_stencil_requires_translation_invariance(gaussian_kernel):
    spec = VaryingConeSensitivity(radius=0.4, angle_min=math.pi / 4, orientation=RotationalField())
    density = GridDensity(domain=unit_box(2), values=np.ones((4, 4)))
    with pytest.raises(InvalidInputError):
        velocity_service.grid_stencil(density, spec, gaussian_kernel)
    # The direct path still works
    assert velocity_service.velocity_on_grid(density, spec, gaussian_kernel).shape == (4, 4, 2)


def test_mollified_grid_velocity_matches_direct_sum(rng, ball_spec, gaussian_kernel):
    params = MollificationParams(epsilon=0.05, eta=0.05, nodes=3)
    density = GridDensity(domain=unit_box(2), values=rng.random((6, 6)))
    via_stencil = velocity_service.velocity_on_grid(density, ball_spec, gaussian_kernel, params)
    direct = velocity_service.velocity_from_density(density.centers, density, ball_spec, gaussian_kernel, params)
    np.testing.assert_allclose(via_stencil.reshape(-1, 2), direct, atol=1e-12)


def test_mollification_only_acts_near_the_boundary(ball_spec, gaussian_kernel):
    values = np.zeros((10, 10))
    values[5, 5] = 100.0
    density = GridDensity(domain=unit_box(2), values=values)
    x = np.array([0.45, 0.55])
    params = MollificationParams(epsilon=0.05, eta=0.05, nodes=5)
    sharp = velocity_service.velocity_from_density(x, density, ball_spec, gaussian_kernel)
    smooth = velocity_service.velocity_from_density(x, density, ball_spec, gaussian_kernel, params)
    np.testing.assert_allclose(smooth, sharp, atol=1e-14)


def _smooth_density(points):
    return 1.0 + 0.5 * np.sin(2 * np.pi * points[..., 0]) * np.cos(2 * np.pi * points[..., 1])


def test_grid_velocity_converges_to_the_integral(rng):
    # Narrow kernel so the integrand is nearly zero on the sensitivity circle
    kernel = GaussianGradKernel(amplitude=1.0, width=0.08)
    spec = FixedBallSensitivity(radius=0.3)
    x = np.array([0.45, 0.55])

    # Polar Gauss-Legendre in the radius, periodic trapezoid in the angle
    nodes, weights = np.polynomial.legendre.leggauss(64)
    s = 0.15 * (nodes + 1.0)
    theta = 2 * np.pi * np.arange(256) / 256
    z = s[:, None, None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)[None, :, :]
    integrand = kernel.gradient(-z) * _smooth_density(x + z)[..., None] * s[:, None, None]
    exact = np.einsum('i,ijd->d', 0.15 * weights, integrand) * (2 * np.pi / 256)

    errors, fine = [], None
    for cells in (16, 32, 64):
        density = GridDensity(domain=unit_box(2), values=np.ones((cells, cells)))
        density = density.with_values(_smooth_density(density.centers).reshape(cells, cells), 0.0)
        fine = velocity_service.velocity_from_density(x, density, spec, kernel)
        errors.append(np.linalg.norm(fine - exact))
    assert errors[0] > errors[1] > errors[2]

    # 10^6-sample Monte Carlo integral over the unit box
    y = rng.random((1_000_000, 2))
    w = np.broadcast_to(spec.orientation_at(x), y.shape)
    samples = kernel.gradient(x - y) * (sensitivity_service.indicator(spec, w, y - x) * _smooth_density(y))[:, None]
    mc_mean = samples.mean(axis=0)
    mc_se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    assert np.all(np.abs(mc_mean - exact) < 3 * mc_se)
    # The finest grid is resolved below the Monte Carlo noise
    assert np.all(np.abs(fine - exact) < 2 * mc_se)
