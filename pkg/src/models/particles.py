"""
Particle system models
ParticleCloud state with per-particle reflection ledgers, the SimConfig run description
(serialised under `simulation`) and the CoupledRun pair used for synchronous coupling
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated

from src.exceptions import InvalidInputError, StateError
from src.models.domain import DomainSpec
from src.models.kernel import KernelSpec
from src.models.sensitivity import SensitivitySpec

# Relative slack used when matching snapshot times to step multiples
SCHEDULE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Runtime state
# ---------------------------------------------------------------------------

@dataclass
class ReflectionLedger:
    """Accumulated reflection K^i_t (vector) and its total variation |K^i|_t"""
    vector: np.ndarray
    total: np.ndarray

    @classmethod
    def zeros(cls, n: int, dimension: int) -> 'ReflectionLedger':
        return cls(vector=np.zeros((n, dimension)), total=np.zeros(n))

    def record(self, reflection: np.ndarray) -> 'ReflectionLedger':
        return ReflectionLedger(
            vector=self.vector + reflection,
            total=self.total + np.linalg.norm(reflection, axis=1),
        )

    def take(self, order) -> 'ReflectionLedger':
        return ReflectionLedger(vector=self.vector[order], total=self.total[order])


@dataclass
class ParticleCloud:
    """
    N particle positions in the closed domain. `particle_ids` label the noise
    stream each particle reads, so permuting a cloud permutes its trajectory.
    """
    positions: np.ndarray
    ledger: ReflectionLedger
    time: float = 0.0
    step: int = 0
    particle_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 2 or self.positions.shape[0] < 1:
            raise InvalidInputError("ParticleCloud needs an (N, d) position array with N >= 1")
        if self.particle_ids is None:
            self.particle_ids = np.arange(self.positions.shape[0])
        if self.time < 0:
            raise InvalidInputError("ParticleCloud time must be nonnegative")

    @classmethod
    def from_positions(cls, positions, time: float = 0.0) -> 'ParticleCloud':
        positions = np.asarray(positions, dtype=float)
        if positions.ndim != 2:
            raise InvalidInputError("positions must be an (N, d) array")
        return cls(positions=positions.copy(), ledger=ReflectionLedger.zeros(*positions.shape), time=time)

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def advanced(self, positions: np.ndarray, reflection: np.ndarray, dt: float) -> 'ParticleCloud':
        return replace(self, positions=positions, ledger=self.ledger.record(reflection),
                       time=self.time + dt, step=self.step + 1)

    def permuted(self, order) -> 'ParticleCloud':
        """Relabel particles; positions, ledgers and noise ids move together"""
        order = np.asarray(order)
        return replace(self, positions=self.positions[order], ledger=self.ledger.take(order),
                       particle_ids=self.particle_ids[order])

    def to_dict(self) -> dict:
        return {
            'time': self.time,
            'step': self.step,
            'particle_ids': self.particle_ids.tolist(),
            'positions': self.positions.tolist(),
            'reflection_total': self.ledger.total.tolist(),
        }


@dataclass
class CoupledRun:
    """Interacting and McKean clouds sharing initial data and Brownian increments"""
    interacting: ParticleCloud
    mckean: ParticleCloud

    @classmethod
    def start(cls, cloud: ParticleCloud) -> 'CoupledRun':
        twin = replace(cloud, positions=cloud.positions.copy(),
                       ledger=ReflectionLedger(cloud.ledger.vector.copy(), cloud.ledger.total.copy()))
        return cls(interacting=cloud, mckean=twin)

    def check_aligned(self):
        if self.interacting.step != self.mckean.step or not math.isclose(
                self.interacting.time, self.mckean.time, rel_tol=SCHEDULE_TOL, abs_tol=SCHEDULE_TOL):
            raise StateError(f"Coupled clouds are misaligned: t={self.interacting.time} vs t={self.mckean.time}")
        if self.interacting.size != self.mckean.size:
            raise StateError("Coupled clouds have different particle counts")

    @property
    def deviation(self) -> float:
        """sup_i |X_i - Y_i|"""
        return float(np.max(np.linalg.norm(self.interacting.positions - self.mckean.positions, axis=1)))


# ---------------------------------------------------------------------------
# Initial laws
# ---------------------------------------------------------------------------

class _LawBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class UniformLaw(_LawBase):
    """Uniform on the domain"""
    kind: Literal['uniform'] = 'uniform'


class TruncatedGaussianLaw(_LawBase):
    """Gaussian N(mean, std^2 I) conditioned on the domain"""
    kind: Literal['truncated_gaussian'] = 'truncated_gaussian'
    mean: List[float]
    std: float

    @model_validator(mode='after')
    def _validate(self):
        if not self.std > 0:
            raise ValueError("std must be positive")
        return self


class UserCloudLaw(_LawBase):
    """Explicit initial positions"""
    kind: Literal['user'] = 'user'
    positions: List[List[float]]


InitialLaw = Annotated[Union[UniformLaw, TruncatedGaussianLaw, UserCloudLaw], Field(discriminator='kind')]


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

class SimConfig(BaseModel):
    """One interacting-particle run"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    n_particles: int
    T: float
    sigma: float = 0.0
    dt: Optional[float] = None
    seed: int = 0
    domain: DomainSpec
    sensitivity: SensitivitySpec
    kernel: KernelSpec
    initial: InitialLaw = Field(default_factory=UniformLaw)
    snapshots: List[float] = Field(default_factory=list)
    bin_width: Optional[float] = None

    @model_validator(mode='after')
    def _validate(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        dims = {self.domain.dimension, self.sensitivity.dimension}
        if len(dims) != 1:
            raise ValueError(f"domain and sensitivity dimensions disagree: {sorted(dims)}")
        dt = self.time_step
        if not dt > 0:
            raise ValueError("dt must be positive")
        if self.T < dt:
            raise ValueError(f"T={self.T} must be at least dt={dt}")
        for t in self.snapshots:
            if t < 0 or t > self.T * (1 + SCHEDULE_TOL):
                raise ValueError(f"snapshot time {t} outside [0, T]")
            k = round(t / dt)
            if abs(k * dt - t) > SCHEDULE_TOL * max(1.0, t):
                raise ValueError(f"snapshot time {t} is not a multiple of dt={dt}")
        if isinstance(self.initial, UserCloudLaw):
            if len(self.initial.positions) != self.n_particles:
                raise ValueError("user cloud size must equal n_particles")
        if isinstance(self.initial, TruncatedGaussianLaw) and len(self.initial.mean) != self.domain.dimension:
            raise ValueError("truncated gaussian mean must match the domain dimension")
        return self

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def time_step(self) -> float:
        """Explicit dt, or 1e-3 * min(1, diameter^2 / (2 sigma))"""
        if self.dt is not None:
            return self.dt
        if self.sigma == 0:
            return 1e-3
        return 1e-3 * min(1.0, self.domain.diameter() ** 2 / (2.0 * self.sigma))

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.time_step + SCHEDULE_TOL))

    @property
    def snapshot_steps(self) -> List[int]:
        return sorted({int(round(t / self.time_step)) for t in self.snapshots})

    def with_updates(self, **changes) -> 'SimConfig':
        """Validated copy with some fields replaced"""
        data = self.model_dump()
        data.update(changes)
        return SimConfig.model_validate(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode='json')
