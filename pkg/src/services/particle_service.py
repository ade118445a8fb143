"""
Particle Service
Initial clouds, the projected Euler-Maruyama update of the interacting system and of its
McKean-Vlasov surrogate, and synchronous coupling of the two through shared noise streams
"""

import logging
import time as clock
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.config import Config
from src.exceptions import ConfigurationError, InvalidInputError
from src.models.domain import BallDomain, BoxDomain, HalfspaceDomain, boundary_tolerance
from src.models.particles import (
    CoupledRun,
    ParticleCloud,
    SimConfig,
    TruncatedGaussianLaw,
    UniformLaw,
    UserCloudLaw,
)
from src.services.geometry_service import geometry_service
from src.services.sensitivity_service import uniform_in_ball
from src.services.velocity_service import velocity_service

logger = logging.getLogger(__name__)

# Stream tags: one Philox key per purpose so initial data and noise never overlap
NOISE_TAG = 0
INIT_TAG = 1
SAMPLING_TAG = 2


def stream_generator(seed: int, tag: int = 0, counter: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, tag)"""
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(tag) << 64), counter=int(counter)))


def derive_seeds(seed: int, count: int) -> List[int]:
    """Independent 64-bit child seeds, stable for a given parent seed"""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


class NoiseStream:
    """
    Standard normal increments addressed by (step, particle id).
    Each step reads its own 2^128-block counter window, so the increment a
    particle receives does not depend on worker count, cloud order or which
    system consumes it.
    """

    def __init__(self, seed: int, dimension: int, tag: int = NOISE_TAG):
        self.seed = int(seed)
        self.dimension = dimension
        self.tag = tag

    def increments(self, step: int, particle_ids) -> np.ndarray:
        particle_ids = np.asarray(particle_ids, dtype=int)
        population = int(particle_ids.max()) + 1
        rng = stream_generator(self.seed, self.tag, counter=int(step) << 128)
        return rng.standard_normal((population, self.dimension))[particle_ids]


@dataclass
class SimulationResult:
    final: ParticleCloud
    snapshots: List[ParticleCloud] = field(default_factory=list)
    wall_time: float = 0.0


@dataclass
class CoupledResult:
    final: CoupledRun
    times: List[float] = field(default_factory=list)
    deviations: List[float] = field(default_factory=list)
    interacting_snapshots: List[ParticleCloud] = field(default_factory=list)
    mckean_snapshots: List[ParticleCloud] = field(default_factory=list)


class ParticleService:
    """Time integration of the interacting and McKean particle systems"""

    def __init__(self, rejection_max: int = Config.REJECTION_MAX_PROPOSALS):
        self.rejection_max = rejection_max

    # ------------------------------------------------------------------
    # Initial data
    # ------------------------------------------------------------------

    def init_cloud(self, config: SimConfig, rng: np.random.Generator) -> ParticleCloud:
        """N i.i.d. draws from the configured initial law, all in the closed domain"""
        law = config.initial
        domain = config.domain
        n = config.n_particles

        if isinstance(law, UserCloudLaw):
            positions = np.asarray(law.positions, dtype=float)
            if positions.shape != (n, domain.dimension):
                raise ConfigurationError(f"user cloud has shape {positions.shape}, expected {(n, domain.dimension)}")
            if not np.all(domain.contains(positions, tol=boundary_tolerance(domain))):
                raise ConfigurationError("user cloud has points outside the domain")
            return ParticleCloud.from_positions(positions)

        if isinstance(law, UniformLaw):
            if isinstance(domain, BoxDomain):
                return ParticleCloud.from_positions(domain.lo_array + rng.random((n, domain.dimension)) * domain.lengths)
            if isinstance(domain, BallDomain):
                return ParticleCloud.from_positions(
                    domain.center_array + uniform_in_ball(rng, n, domain.dimension, domain.radius))
            lo, hi = domain.bounding_box()
            return ParticleCloud.from_positions(
                self._rejection(lambda k: lo + rng.random((k, domain.dimension)) * (hi - lo), domain, n))

        if isinstance(law, TruncatedGaussianLaw):
            mean = np.asarray(law.mean, dtype=float)
            return ParticleCloud.from_positions(
                self._rejection(lambda k: mean + law.std * rng.standard_normal((k, domain.dimension)), domain, n))

        raise InvalidInputError(f"Unsupported initial law: {type(law).__name__}")

    def _rejection(self, propose, domain, n: int) -> np.ndarray:
        accepted = []
        count = 0
        proposals = 0
        batch = max(64, n)
        while count < n:
            if proposals >= self.rejection_max:
                raise ConfigurationError(
                    f"Rejection sampling accepted {count}/{n} points after {proposals} proposals")
            size = min(batch, self.rejection_max - proposals)
            candidates = propose(size)
            proposals += size
            keep = candidates[domain.contains(candidates)]
            accepted.append(keep)
            count += keep.shape[0]
        return np.vstack(accepted)[:n]

    # ------------------------------------------------------------------
    # Single steps
    # ------------------------------------------------------------------

    def interacting_drift(self, cloud: ParticleCloud, config: SimConfig) -> np.ndarray:
        """Drift of every particle from the pre-step cloud (Jacobi update)"""
        if config.kernel.is_zero:
            return np.zeros_like(cloud.positions)
        if config.bin_width is not None:
            index = velocity_service.build_index(cloud, config.sensitivity, config.bin_width)
            return velocity_service.velocity_empirical_binned(
                cloud.positions, cloud, config.sensitivity, config.kernel, config.bin_width, index=index)
        return velocity_service.velocity_empirical(cloud.positions, cloud, config.sensitivity, config.kernel)

    def step_interacting(self, cloud: ParticleCloud, config: SimConfig, noise: NoiseStream) -> ParticleCloud:
        drift = self.interacting_drift(cloud, config)
        return self._apply(cloud, drift, noise.increments(cloud.step, cloud.particle_ids), config)

    def mckean_drift(self, cloud: ParticleCloud, provider) -> np.ndarray:
        density = provider(cloud.time)
        pde = provider.config
        if pde.kernel.is_zero:
            return np.zeros_like(cloud.positions)
        return velocity_service.velocity_from_density(
            cloud.positions, density, pde.sensitivity, pde.kernel, pde.mollification)

    def step_mckean(self, cloud: ParticleCloud, provider, config: SimConfig, noise: NoiseStream) -> ParticleCloud:
        """Independent particles driven by the PDE density at the current time"""
        drift = self.mckean_drift(cloud, provider)
        return self._apply(cloud, drift, noise.increments(cloud.step, cloud.particle_ids), config)

    def advance_coupled(self, run: CoupledRun, config: SimConfig, provider, noise: NoiseStream) -> CoupledRun:
        """One step of both systems with identical Gaussian increments"""
        run.check_aligned()
        increments = noise.increments(run.interacting.step, run.interacting.particle_ids)
        interacting = self._apply(run.interacting, self.interacting_drift(run.interacting, config), increments, config)
        mckean = self._apply(run.mckean, self.mckean_drift(run.mckean, provider), increments, config)
        return CoupledRun(interacting=interacting, mckean=mckean)

    def _apply(self, cloud: ParticleCloud, drift, increments, config: SimConfig) -> ParticleCloud:
        dt = config.time_step
        positions, reflection = geometry_service.reflected_step(
            cloud.positions, drift, increments, dt, config.sigma, config.domain)
        return cloud.advanced(positions, reflection, dt)

    # ------------------------------------------------------------------
    # Whole runs
    # ------------------------------------------------------------------

    def simulate(self, config: SimConfig, cloud: Optional[ParticleCloud] = None) -> SimulationResult:
        """Interacting system from t = 0 to T with snapshots on the configured schedule"""
        started = clock.perf_counter()
        if cloud is None:
            cloud = self.init_cloud(config, stream_generator(config.seed, INIT_TAG))
        noise = NoiseStream(config.seed, config.dimension)
        wanted = set(config.snapshot_steps)
        snapshots = [cloud] if 0 in wanted else []

        logger.info(f"Simulating N={config.n_particles} for {config.n_steps} steps (dt={config.time_step:.3e})")
        for _ in range(config.n_steps):
            cloud = self.step_interacting(cloud, config, noise)
            if cloud.step in wanted:
                snapshots.append(cloud)
                logger.debug(f"Snapshot at t={cloud.time:.4f}")
        wall = clock.perf_counter() - started
        logger.info(f"Simulation finished in {wall:.2f}s")
        return SimulationResult(final=cloud, snapshots=snapshots, wall_time=wall)

    def simulate_mckean(self, config: SimConfig, provider, cloud: Optional[ParticleCloud] = None,
                        noise: Optional[NoiseStream] = None) -> SimulationResult:
        started = clock.perf_counter()
        if cloud is None:
            cloud = self.init_cloud(config, stream_generator(config.seed, INIT_TAG))
        noise = noise or NoiseStream(config.seed, config.dimension)
        wanted = set(config.snapshot_steps)
        snapshots = [cloud] if 0 in wanted else []
        for _ in range(config.n_steps):
            cloud = self.step_mckean(cloud, provider, config, noise)
            if cloud.step in wanted:
                snapshots.append(cloud)
        return SimulationResult(final=cloud, snapshots=snapshots, wall_time=clock.perf_counter() - started)

    def simulate_coupled(self, config: SimConfig, provider, cloud: Optional[ParticleCloud] = None) -> CoupledResult:
        """Coupled run recording sup_i |X_i - Y_i| after every step"""
        if cloud is None:
            cloud = self.init_cloud(config, stream_generator(config.seed, INIT_TAG))
        run = CoupledRun.start(cloud)
        noise = NoiseStream(config.seed, config.dimension)
        wanted = set(config.snapshot_steps)
        result = CoupledResult(final=run, times=[0.0], deviations=[run.deviation])
        if 0 in wanted:
            result.interacting_snapshots.append(run.interacting)
            result.mckean_snapshots.append(run.mckean)
        for _ in range(config.n_steps):
            run = self.advance_coupled(run, config, provider, noise)
            result.times.append(run.interacting.time)
            result.deviations.append(run.deviation)
            if run.interacting.step in wanted:
                result.interacting_snapshots.append(run.interacting)
                result.mckean_snapshots.append(run.mckean)
        result.final = run
        return result


# Global instance for use across the application
particle_service = ParticleService()
