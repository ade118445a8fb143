"""
Sensitivity region models
Set-valued maps x -> K(w(x)) (fixed/varying balls, fixed/varying vision cones),
their orientation fields w and mollification parameters, serialised under `sensitivity`
"""

import math
from functools import cached_property
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated


class _FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    def to_dict(self) -> dict:
        return self.model_dump(mode='json')


# ---------------------------------------------------------------------------
# Orientation fields
# ---------------------------------------------------------------------------

class ConstantField(_FrozenModel):
    """w(x) = vector"""
    kind: Literal['constant'] = 'constant'
    vector: List[float]

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.vector, dtype=float), x.shape).copy()

    @property
    def lipschitz(self) -> float:
        return 0.0


class RotationalField(_FrozenModel):
    """w(x) = scale * J (x - center) + offset, J the quarter turn in the first two axes"""
    kind: Literal['rotational'] = 'rotational'
    scale: float = 1.0
    center: Optional[List[float]] = None
    offset: Optional[List[float]] = None

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shifted = x - np.asarray(self.center, dtype=float) if self.center is not None else x
        w = np.zeros_like(shifted)
        w[..., 0] = -shifted[..., 1]
        w[..., 1] = shifted[..., 0]
        w *= self.scale
        if self.offset is not None:
            w += np.asarray(self.offset, dtype=float)
        return w

    @property
    def lipschitz(self) -> float:
        return abs(self.scale)


class RadialField(_FrozenModel):
    """w(x) = scale * (x - center)"""
    kind: Literal['radial'] = 'radial'
    scale: float = 1.0
    center: Optional[List[float]] = None

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shifted = x - np.asarray(self.center, dtype=float) if self.center is not None else x
        return self.scale * shifted

    @property
    def lipschitz(self) -> float:
        return abs(self.scale)


OrientationField = Annotated[Union[ConstantField, RotationalField, RadialField], Field(discriminator='kind')]


# ---------------------------------------------------------------------------
# Sensitivity sets
# ---------------------------------------------------------------------------

class _SensitivityBase(_FrozenModel):
    dimension: int = 2
    orientation: Optional[OrientationField] = None

    @property
    def support_radius(self) -> float:
        """Radius of the compact set containing every K(w(x))"""
        raise NotImplementedError

    @property
    def translation_invariant(self) -> bool:
        """True when K(w(x)) does not depend on x"""
        return self.orientation is None or isinstance(self.orientation, ConstantField)

    @property
    def is_cone(self) -> bool:
        return False

    @property
    def orientation_lipschitz(self) -> float:
        return 0.0 if self.orientation is None else self.orientation.lipschitz

    def orientation_at(self, x) -> np.ndarray:
        if self.orientation is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.orientation.evaluate(x)

    @model_validator(mode='after')
    def _check_dimension(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.is_cone and self.orientation is None:
            raise ValueError(f"{self.kind} sensitivity needs an orientation field")
        if isinstance(self.orientation, ConstantField) and len(self.orientation.vector) != self.dimension:
            raise ValueError("constant orientation vector must match the dimension")
        if isinstance(self.orientation, RotationalField) and self.dimension < 2:
            raise ValueError("rotational orientation needs at least two dimensions")
        return self


class FixedBallSensitivity(_SensitivityBase):
    """K = B(0, r), independent of w"""
    kind: Literal['ball'] = 'ball'
    radius: float

    @model_validator(mode='after')
    def _validate(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        return self

    @property
    def support_radius(self) -> float:
        return self.radius

    @property
    def translation_invariant(self) -> bool:
        return True

    def radius_at(self, w_norm):
        return np.full_like(np.asarray(w_norm, dtype=float), self.radius)


class VaryingBallSensitivity(_SensitivityBase):
    """
    K(w) = B(0, rbar(|w|)) with the bounded Lipschitz profile
        rbar(z) = radius_min + (radius_max - radius_min) * exp(-z / length_scale)
    With a radial orientation field centred at the origin this is B(0, rbar(|x|)).
    """
    kind: Literal['varying_ball'] = 'varying_ball'
    radius_max: float
    radius_min: float
    length_scale: float = 1.0
    orientation: Optional[OrientationField] = Field(default_factory=lambda: RadialField())

    @model_validator(mode='after')
    def _validate(self):
        if not (0 < self.radius_min <= self.radius_max):
            raise ValueError("need 0 < radius_min <= radius_max")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        return self

    @property
    def support_radius(self) -> float:
        return self.radius_max

    @property
    def radius_lipschitz(self) -> float:
        return (self.radius_max - self.radius_min) / self.length_scale

    def radius_at(self, w_norm):
        w_norm = np.asarray(w_norm, dtype=float)
        return self.radius_min + (self.radius_max - self.radius_min) * np.exp(-w_norm / self.length_scale)


class FixedConeSensitivity(_SensitivityBase):
    """Vision cone C(r, w, theta): |y| <= r and angle(y, w) <= theta"""
    kind: Literal['cone'] = 'cone'
    radius: float
    angle: float

    @model_validator(mode='after')
    def _validate(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not (0 < self.angle < math.pi):
            raise ValueError("cone angle must lie in (0, pi)")
        if self.dimension not in (2, 3):
            raise ValueError("vision cones are defined in dimension 2 or 3")
        return self

    @property
    def support_radius(self) -> float:
        return self.radius

    @property
    def is_cone(self) -> bool:
        return True

    def angle_at(self, w_norm):
        return np.full_like(np.asarray(w_norm, dtype=float), self.angle)


class VaryingConeSensitivity(_SensitivityBase):
    """
    Vision cone whose half-angle depends on |w|:
        theta(z) = pi                                                   for z <= 1
        theta(z) = angle_min + (pi - angle_min) * (1 - exp(-1 / (steepness (z - 1))))  for z > 1
    The profile is smooth, decreasing and tends to angle_min.
    """
    kind: Literal['varying_cone'] = 'varying_cone'
    radius: float
    angle_min: float
    steepness: float = 1.0

    @model_validator(mode='after')
    def _validate(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not (0 < self.angle_min < math.pi):
            raise ValueError("angle_min must lie in (0, pi)")
        if not self.steepness > 0:
            raise ValueError("steepness must be positive")
        if self.dimension not in (2, 3):
            raise ValueError("vision cones are defined in dimension 2 or 3")
        return self

    @property
    def support_radius(self) -> float:
        return self.radius

    @property
    def is_cone(self) -> bool:
        return True

    def angle_at(self, w_norm):
        z = np.asarray(w_norm, dtype=float)
        excess = np.where(z > 1.0, z - 1.0, 1.0)
        opening = 1.0 - np.exp(-1.0 / (self.steepness * excess))
        return np.where(z > 1.0, self.angle_min + (math.pi - self.angle_min) * opening, math.pi)


SensitivitySpec = Annotated[
    Union[FixedBallSensitivity, VaryingBallSensitivity, FixedConeSensitivity, VaryingConeSensitivity],
    Field(discriminator='kind'),
]


class MollificationParams(_FrozenModel):
    """Widths of the spatial and orientation mollifiers plus quadrature size"""
    epsilon: float
    eta: float
    nodes: int = 9

    @model_validator(mode='after')
    def _validate(self):
        if not (self.epsilon > 0 and self.eta > 0):
            raise ValueError("epsilon and eta must be positive")
        if self.nodes < 2:
            raise ValueError("need at least two quadrature nodes per axis")
        return self

    @property
    def in_convergence_range(self) -> bool:
        return self.epsilon <= 0.5 and self.eta <= 0.5

    @cached_property
    def reference_rule(self):
        """Gauss-Legendre nodes and weights on [-1, 1]"""
        return np.polynomial.legendre.leggauss(self.nodes)
