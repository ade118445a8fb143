import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import solve_ivp

from src.exceptions import ConfigurationError, StateError
from src.models.domain import BallDomain
from src.models.kernel import zero_kernel
from src.models.particles import CoupledRun, ParticleCloud, TruncatedGaussianLaw, UserCloudLaw
from src.models.pde import GridDensity
from src.services.particle_service import (
    INIT_TAG,
    NOISE_TAG,
    NoiseStream,
    ParticleService,
    derive_seeds,
    particle_service,
    stream_generator,
)
from src.services.pde_service import DensityProvider, pde_service
from tests.conftest import make_pde_config, make_sim_config


def test_noise_is_addressed_by_particle_id():
    noise = NoiseStream(seed=42, dimension=2)
    ids = np.arange(10)
    base = noise.increments(3, ids)
    order = np.array([4, 0, 9, 1, 2, 3, 5, 6, 7, 8])
    np.testing.assert_array_equal(noise.increments(3, ids[order]), base[order])
    # Other steps and seeds draw other numbers
    assert not np.allclose(noise.increments(4, ids), base)
    assert not np.allclose(NoiseStream(seed=43, dimension=2).increments(3, ids), base)


def test_stream_tags_are_independent():
    noise = stream_generator(7, NOISE_TAG).random(5)
    init = stream_generator(7, INIT_TAG).random(5)
    assert not np.allclose(noise, init)
    np.testing.assert_array_equal(stream_generator(7, INIT_TAG).random(5), init)


def test_derived_seeds_are_stable_and_distinct():
    seeds = derive_seeds(123, 8)
    assert seeds == derive_seeds(123, 8)
    assert len(set(seeds)) == 8
    assert all(0 <= s < 2 ** 64 for s in seeds)


def test_simulation_is_reproducible():
    config = make_sim_config()
    first = particle_service.simulate(config)
    second = particle_service.simulate(config)
    np.testing.assert_array_equal(first.final.positions, second.final.positions)
    np.testing.assert_array_equal(first.final.ledger.total, second.final.ledger.total)


def test_relabelled_cloud_follows_the_same_paths():
    config = make_sim_config(n_particles=24)
    cloud = particle_service.init_cloud(config, stream_generator(config.seed, INIT_TAG))
    order = np.random.default_rng(0).permutation(24)
    plain = particle_service.simulate(config, cloud=cloud)
    relabelled = particle_service.simulate(config, cloud=cloud.permuted(order))
    np.testing.assert_allclose(relabelled.final.positions, plain.final.positions[order], atol=1e-12)


def test_particles_stay_in_domain_and_ledgers_grow(disc):
    config = make_sim_config(domain=disc, sigma=0.5, T=0.2, dt=0.01, snapshots=[0.0, 0.1, 0.2])
    result = particle_service.simulate(config)
    assert [round(c.time, 10) for c in result.snapshots] == [0.0, 0.1, 0.2]
    for cloud in result.snapshots:
        assert np.all(disc.contains(cloud.positions, tol=1e-9))
    totals = [c.ledger.total for c in result.snapshots]
    for before, after in zip(totals, totals[1:]):
        assert np.all(after >= before)
    assert result.final.ledger.total.max() > 0


def test_no_drift_no_noise_means_no_motion():
    config = make_sim_config(kernel=zero_kernel(), sigma=0.0)
    cloud = particle_service.init_cloud(config, stream_generator(config.seed, INIT_TAG))
    result = particle_service.simulate(config, cloud=cloud)
    np.testing.assert_array_equal(result.final.positions, cloud.positions)
    assert result.final.step == config.n_steps


def test_interaction_pulls_a_pair_together():
    config = make_sim_config(n_particles=2, sigma=0.0, T=0.1, dt=0.01,
                             initial=UserCloudLaw(positions=[[0.4, 0.5], [0.6, 0.5]]))
    result = particle_service.simulate(config)
    gap = np.linalg.norm(result.final.positions[0] - result.final.positions[1])
    assert gap < 0.2


def test_truncated_gaussian_initial_cloud_in_domain(rng):
    config = make_sim_config(n_particles=500, initial=TruncatedGaussianLaw(mean=[0.9, 0.9], std=0.3))
    cloud = particle_service.init_cloud(config, rng)
    assert cloud.size == 500
    assert np.all(config.domain.contains(cloud.positions))


def test_rejection_cap_raises(rng):
    config = make_sim_config(initial=TruncatedGaussianLaw(mean=[5.0, 5.0], std=0.1))
    with pytest.raises(ConfigurationError):
        ParticleService(rejection_max=1000).init_cloud(config, rng)


def test_ball_uniform_initial_cloud(rng):
    domain = BallDomain(center=[1.0, -1.0], radius=0.5)
    config = make_sim_config(domain=domain, n_particles=300)
    cloud = particle_service.init_cloud(config, rng)
    assert np.all(domain.contains(cloud.positions))


def test_sim_config_validation(box):
    with pytest.raises(ValidationError):
        make_sim_config(snapshots=[0.015])
    with pytest.raises(ValidationError):
        make_sim_config(snapshots=[0.5])
    with pytest.raises(ValidationError):
        make_sim_config(sigma=-1.0)
    with pytest.raises(ValidationError):
        make_sim_config(n_particles=3, initial=UserCloudLaw(positions=[[0.1, 0.1]]))
    defaulted = make_sim_config(dt=None, sigma=1.0)
    assert defaulted.time_step == pytest.approx(1e-3)
    assert make_sim_config(dt=None, sigma=10.0).time_step == pytest.approx(1e-4)


def test_coupled_run_without_interaction_stays_together():
    config = make_sim_config(kernel=zero_kernel(), sigma=0.1, snapshots=[0.05, 0.1])
    provider = pde_service.solve(make_pde_config(kernel=zero_kernel(), sigma=0.1), use_cache=False)
    result = particle_service.simulate_coupled(config, provider)
    assert max(result.deviations) == 0.0
    assert len(result.interacting_snapshots) == len(result.mckean_snapshots) == 2


def test_coupled_run_deviation_is_small_with_interaction():
    config = make_sim_config(n_particles=64, sigma=0.05)
    provider = pde_service.solve(make_pde_config(sigma=0.05, cells=16), use_cache=False)
    result = particle_service.simulate_coupled(config, provider)
    assert result.deviations[0] == 0.0
    assert 0.0 < max(result.deviations) < 0.1


def test_misaligned_coupled_run_is_rejected():
    cloud = ParticleCloud.from_positions(np.full((3, 2), 0.5))
    run = CoupledRun.start(cloud)
    run.mckean = ParticleCloud(positions=cloud.positions, ledger=cloud.ledger, time=0.01, step=1)
    with pytest.raises(StateError):
        run.check_aligned()


def _frozen_spike_provider(center_cell, T):
    values = np.zeros((10, 10))
    values[center_cell] = 100.0
    pde_config = make_pde_config(T=T, sigma=0.0)
    frozen = [GridDensity(domain=pde_config.domain, values=values, time=t) for t in (0.0, T)]
    return DensityProvider(pde_config, frozen, max_sup=100.0)


def test_mckean_particle_follows_the_spike_ode():
    T = 0.5
    provider = _frozen_spike_provider((5, 5), T)
    kernel = provider.config.kernel
    center = np.array([0.55, 0.55])
    start = np.array([0.35, 0.45])

    oracle = solve_ivp(lambda t, y: kernel.gradient(y - center), (0.0, T), start,
                       method='DOP853', rtol=1e-12, atol=1e-14)
    exact = oracle.y[:, -1]
    assert np.linalg.norm(exact - center) < np.linalg.norm(start - center)

    errors = []
    for dt in (0.02, 0.01, 0.005):
        config = make_sim_config(n_particles=1, sigma=0.0, T=T, dt=dt, initial=UserCloudLaw(positions=[start]))
        result = particle_service.simulate_mckean(config, provider)
        assert result.final.time == pytest.approx(T)
        errors.append(np.linalg.norm(result.final.positions[0] - exact))
    # First-order convergence of the Euler scheme
    assert errors[0] > errors[1] > errors[2]
    for coarse, fine in zip(errors, errors[1:]):
        assert 1.6 < coarse / fine < 2.4
    assert errors[-1] < 0.05
