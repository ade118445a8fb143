"""
Mean-field PDE models
GridDensity on a uniform Box mesh and the PdeConfig run description (serialised under `pde`)
"""

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated

from src.exceptions import ConfigurationError, InvalidInputError
from src.models.domain import BoxDomain
from src.models.kernel import KernelSpec
from src.models.sensitivity import MollificationParams, SensitivitySpec

CFL_SAFETY = 0.4
# Step count used when neither drift nor diffusion constrains dt
UNCONSTRAINED_STEPS = 100


@dataclass
class GridDensity:
    """Cell-averaged density on a uniform rectilinear mesh over a Box"""
    domain: BoxDomain
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != self.domain.dimension:
            raise InvalidInputError(
                f"density has {self.values.ndim} axes, domain dimension is {self.domain.dimension}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise InvalidInputError("density values must be finite and nonnegative")

    @property
    def cells(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def dimension(self) -> int:
        return self.values.ndim

    @cached_property
    def spacing(self) -> np.ndarray:
        return self.domain.lengths / np.asarray(self.cells, dtype=float)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def axes(self) -> List[np.ndarray]:
        """Cell-centre coordinates per axis"""
        return [self.domain.lo_array[k] + (np.arange(n) + 0.5) * self.spacing[k] for k, n in enumerate(self.cells)]

    @cached_property
    def centers(self) -> np.ndarray:
        """(M, d) cell centres in C order"""
        grids = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def cell_masses(self) -> np.ndarray:
        return self.values.ravel() * self.cell_volume

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    @property
    def sup(self) -> float:
        return float(self.values.max())

    def cell_index(self, points) -> np.ndarray:
        """Multi-index of the cell containing each point (clamped to the mesh)"""
        points = np.asarray(points, dtype=float)
        raw = np.floor((points - self.domain.lo_array) / self.spacing).astype(int)
        return np.clip(raw, 0, np.asarray(self.cells) - 1)

    def with_values(self, values, time: float) -> 'GridDensity':
        return replace(self, values=values, time=time)

    def to_dict(self) -> dict:
        return {
            'time': self.time,
            'cells': list(self.cells),
            'spacing': self.spacing.tolist(),
            'mass': self.mass,
            'values': self.values.tolist(),
        }


# ---------------------------------------------------------------------------
# Initial densities
# ---------------------------------------------------------------------------

class _DensityBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class UniformDensity(_DensityBase):
    kind: Literal['uniform'] = 'uniform'


class GaussianDensity(_DensityBase):
    """Gaussian bump restricted to the box and renormalised"""
    kind: Literal['gaussian'] = 'gaussian'
    mean: List[float]
    std: float

    @model_validator(mode='after')
    def _validate(self):
        if not self.std > 0:
            raise ValueError("std must be positive")
        return self


class SpikeDensity(_DensityBase):
    """All mass in the cell containing `point`"""
    kind: Literal['spike'] = 'spike'
    point: List[float]


class ProfileDensity(_DensityBase):
    """Explicit cell values (rescaled to the configured mass)"""
    kind: Literal['profile'] = 'profile'
    values: List


InitialDensity = Annotated[
    Union[UniformDensity, GaussianDensity, SpikeDensity, ProfileDensity],
    Field(discriminator='kind'),
]


class PdeConfig(BaseModel):
    """Explicit finite-volume run of the aggregation-diffusion equation on a Box"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    cells: int = 64
    T: float
    sigma: float = 0.0
    dt: Optional[float] = None
    mass: float = 1.0
    domain: BoxDomain
    sensitivity: SensitivitySpec
    kernel: KernelSpec
    initial: InitialDensity = Field(default_factory=UniformDensity)
    snapshots: List[float] = Field(default_factory=list)
    mollification: Optional[MollificationParams] = None

    @model_validator(mode='after')
    def _validate(self):
        if self.cells < 2:
            raise ValueError("need at least two cells per axis")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.sensitivity.dimension != self.domain.dimension:
            raise ValueError("domain and sensitivity dimensions disagree")
        for t in self.snapshots:
            if t < 0 or t > self.T:
                raise ValueError(f"snapshot time {t} outside [0, T]")
        if self.dt is not None:
            if not self.dt > 0:
                raise ValueError("dt must be positive")
            limit = self.cfl_limit
            if self.dt > limit:
                raise ValueError(f"dt={self.dt} violates the CFL limit {limit:.6g}")
        return self

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.cells,) * self.dimension

    @property
    def spacing(self) -> float:
        """Smallest cell width"""
        return float(np.min(self.domain.lengths) / self.cells)

    @property
    def cfl_limit(self) -> float:
        """0.4 * min(h / (max(2, d) |grad phi|_inf mass), h^2 / (4 d sigma))"""
        h = self.spacing
        d = self.dimension
        speed = self.kernel.sup_norm * self.mass
        advective = h / (max(2, d) * speed) if speed > 0 else math.inf
        diffusive = h * h / (4.0 * d * self.sigma) if self.sigma > 0 else math.inf
        return CFL_SAFETY * min(advective, diffusive)

    @property
    def time_step(self) -> float:
        """Explicit dt, or T split into the fewest CFL-admissible equal steps"""
        if self.dt is not None:
            return self.dt
        limit = self.cfl_limit
        if math.isinf(limit):
            return self.T / UNCONSTRAINED_STEPS
        return self.T / math.ceil(self.T / limit)

    def check_cfl(self, dt: float):
        if dt > self.cfl_limit * (1.0 + 1e-12):
            raise ConfigurationError(f"dt={dt} violates the CFL limit {self.cfl_limit:.6g}")

    def cache_key_payload(self) -> dict:
        return self.model_dump(mode='json')

    def with_updates(self, **changes) -> 'PdeConfig':
        data = self.model_dump()
        data.update(changes)
        return PdeConfig.model_validate(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode='json')
