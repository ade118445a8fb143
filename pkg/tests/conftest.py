import os

# Settings are read at import time; pin the testing profile before src is imported
os.environ['SIM_ENV'] = 'testing'
os.environ.pop('REDIS_URL', None)

import numpy as np
import pytest

from src.models.domain import BallDomain, unit_box
from src.models.kernel import GaussianGradKernel
from src.models.particles import SimConfig
from src.models.pde import PdeConfig
from src.models.sensitivity import FixedBallSensitivity


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def box():
    return unit_box(2)


@pytest.fixture
def disc():
    return BallDomain(center=[0.0, 0.0], radius=1.0)


@pytest.fixture
def ball_spec():
    return FixedBallSensitivity(radius=0.3)


@pytest.fixture
def gaussian_kernel():
    return GaussianGradKernel(amplitude=1.0, width=0.25)


def make_sim_config(**changes) -> SimConfig:
    params = dict(
        n_particles=32,
        T=0.1,
        sigma=0.05,
        dt=0.01,
        seed=5,
        domain=unit_box(2),
        sensitivity=FixedBallSensitivity(radius=0.3),
        kernel=GaussianGradKernel(amplitude=1.0, width=0.25),
    )
    params.update(changes)
    return SimConfig(**params)


def make_pde_config(**changes) -> PdeConfig:
    params = dict(
        cells=16,
        T=0.1,
        sigma=0.05,
        domain=unit_box(2),
        sensitivity=FixedBallSensitivity(radius=0.3),
        kernel=GaussianGradKernel(amplitude=1.0, width=0.25),
    )
    params.update(changes)
    return PdeConfig(**params)
