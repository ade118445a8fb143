"""
Run document models
One JSON document per run with top-level keys domain, sensitivity, kernel,
simulation, pde and experiment; parsed into validated SimConfig / PdeConfig objects
"""

import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Annotated

from src.exceptions import ConfigurationError
from src.models.domain import BoxDomain, DomainSpec
from src.models.kernel import KernelSpec
from src.models.particles import InitialLaw, SimConfig, UniformLaw
from src.models.pde import InitialDensity, PdeConfig, UniformDensity
from src.models.sensitivity import (
    ConstantField,
    FixedBallSensitivity,
    FixedConeSensitivity,
    MollificationParams,
    RadialField,
    SensitivitySpec,
    VaryingBallSensitivity,
    VaryingConeSensitivity,
)


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')


class SimulationSection(_Section):
    n_particles: int = 256
    T: float = 1.0
    sigma: float = 0.0
    dt: Optional[float] = None
    seed: int = 0
    initial: InitialLaw = Field(default_factory=UniformLaw)
    snapshots: List[float] = Field(default_factory=list)
    bin_width: Optional[float] = None


class PdeSection(_Section):
    cells: int = 64
    T: float = 1.0
    sigma: float = 0.0
    dt: Optional[float] = None
    mass: float = 1.0
    initial: InitialDensity = Field(default_factory=UniformDensity)
    snapshots: List[float] = Field(default_factory=list)
    mollification: Optional[MollificationParams] = None


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

class _RateExperiment(_Section):
    n_values: List[int] = Field(default_factory=lambda: [64, 256, 1024, 4096])
    replicas: int = 200
    m: int = 2
    slope_band: List[float] = Field(default_factory=lambda: [-0.50, -0.10])

    @model_validator(mode='after')
    def _validate(self):
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n_values must be strictly increasing")
        too_small = [n for n in self.n_values if n < (2 * self.m) ** 2]
        if too_small:
            raise ValueError(f"n_values {too_small} are below (2m)^2 = {(2 * self.m) ** 2}")
        return self


class LlnVelocityExperiment(_RateExperiment):
    kind: Literal['lln_velocity'] = 'lln_velocity'


class LlnThetaExperiment(_RateExperiment):
    kind: Literal['lln_theta'] = 'lln_theta'
    u_points: int = 64


class StabilityExperiment(_Section):
    kind: Literal['stability'] = 'stability'
    deltas: List[float] = Field(default_factory=lambda: [0.01, 0.02, 0.04])
    max_spread: float = 0.2


class ChaosExperiment(_Section):
    kind: Literal['chaos'] = 'chaos'
    n_values: List[int] = Field(default_factory=lambda: [64, 128, 256, 512, 1024])
    replicas: int = 50
    p: float = 1.0
    q: float = 3.0
    m: int = 2
    density_samples: int = 1
    slope_max: float = -0.15

    @model_validator(mode='after')
    def _validate(self):
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ValueError("n_values must be strictly increasing")
        return self


class WeakStrongExperiment(_Section):
    kind: Literal['weak_strong'] = 'weak_strong'
    n_particles: int = 2048
    deltas: List[float] = Field(default_factory=lambda: [0.04, 0.02, 0.01])
    replicas: int = 30


def default_variants() -> list:
    """The four sensitivity families in the plane"""
    return [
        FixedBallSensitivity(radius=0.5),
        VaryingBallSensitivity(radius_max=0.5, radius_min=0.2, length_scale=1.0, orientation=RadialField()),
        FixedConeSensitivity(radius=0.5, angle=math.pi / 4, orientation=ConstantField(vector=[1.0, 0.0])),
        VaryingConeSensitivity(radius=0.5, angle_min=math.pi / 4, steepness=1.0,
                               orientation=RadialField()),
    ]


class AssumptionsExperiment(_Section):
    kind: Literal['assumptions'] = 'assumptions'
    variants: List[SensitivitySpec] = Field(default_factory=default_variants)
    probes: int = 100_000
    mc_samples: int = 20_000
    scales: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    pairs_per_scale: int = 25
    containment_samples: int = 2000
    mollification_epsilons: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])


ExperimentSpec = Annotated[
    Union[LlnVelocityExperiment, LlnThetaExperiment, StabilityExperiment, ChaosExperiment,
          WeakStrongExperiment, AssumptionsExperiment],
    Field(discriminator='kind'),
]


class RunDocument(_Section):
    """Parsed run configuration file"""
    domain: DomainSpec
    sensitivity: SensitivitySpec
    kernel: KernelSpec
    simulation: Optional[SimulationSection] = None
    pde: Optional[PdeSection] = None
    experiment: Optional[ExperimentSpec] = None

    def sim_config(self, seed: Optional[int] = None, **changes) -> SimConfig:
        if self.simulation is None:
            raise ConfigurationError("run document has no `simulation` section")
        data = self.simulation.model_dump()
        if seed is not None:
            data['seed'] = seed
        data.update(changes)
        try:
            return SimConfig(domain=self.domain, sensitivity=self.sensitivity, kernel=self.kernel, **data)
        except ValidationError as e:
            raise ConfigurationError(f"invalid simulation section: {e}") from e

    def pde_config(self, **changes) -> PdeConfig:
        if self.pde is None:
            raise ConfigurationError("run document has no `pde` section")
        if not isinstance(self.domain, BoxDomain):
            raise ConfigurationError("the PDE solver runs on box domains only")
        data = self.pde.model_dump()
        data.update(changes)
        try:
            return PdeConfig(domain=self.domain, sensitivity=self.sensitivity, kernel=self.kernel, **data)
        except ValidationError as e:
            raise ConfigurationError(f"invalid pde section: {e}") from e

    def to_dict(self) -> dict:
        return self.model_dump(mode='json')


def parse_document(payload: dict) -> RunDocument:
    try:
        return RunDocument.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError(f"invalid run document: {e}") from e


def load_document(path) -> RunDocument:
    """Read and validate a JSON run document"""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise ConfigurationError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
    return parse_document(payload)
