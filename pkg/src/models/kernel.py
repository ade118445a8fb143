"""
Interaction kernel models
Bounded Lipschitz interaction fields grad(phi), serialised under the `kernel` key.
Reported sup-norm and Lipschitz constants are checked against random probes when a spec is built.
"""

import math
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Annotated

KERNEL_PROBES = 100_000
PROBE_SEED = 0


class _KernelBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    def gradient(self, z) -> np.ndarray:
        raise NotImplementedError

    @property
    def sup_norm(self) -> float:
        raise NotImplementedError

    @property
    def lipschitz(self) -> float:
        raise NotImplementedError

    @property
    def probe_radius(self) -> float:
        raise NotImplementedError

    @property
    def is_zero(self) -> bool:
        return self.sup_norm == 0.0

    def to_dict(self) -> dict:
        return self.model_dump(mode='json')

    def _check_bounds(self):
        """Reject specs whose reported constants are beaten by a probe"""
        rng = np.random.default_rng(PROBE_SEED)
        half = KERNEL_PROBES // 2
        a = rng.uniform(-self.probe_radius, self.probe_radius, size=(half, 3))
        # Half of the partners are close by so the local slope is probed too
        b = np.vstack([
            rng.uniform(-self.probe_radius, self.probe_radius, size=(half // 2, 3)),
            a[half // 2:] + rng.normal(scale=1e-3 * self.probe_radius, size=(half - half // 2, 3)),
        ])
        ga = self.gradient(a)
        gb = self.gradient(b)
        sup = max(np.linalg.norm(ga, axis=1).max(), np.linalg.norm(gb, axis=1).max())
        if sup > self.sup_norm * (1.0 + 1e-12) + 1e-300:
            raise ValueError(f"{self.kind}: probed |grad phi| {sup:.6g} exceeds reported bound {self.sup_norm:.6g}")
        gaps = np.linalg.norm(a - b, axis=1)
        slopes = np.linalg.norm(ga - gb, axis=1) / np.where(gaps > 0, gaps, 1.0)
        if slopes.max() > self.lipschitz * (1.0 + 1e-9) + 1e-300:
            raise ValueError(f"{self.kind}: probed slope {slopes.max():.6g} exceeds reported Lipschitz "
                             f"constant {self.lipschitz:.6g}")
        return self


class GaussianGradKernel(_KernelBase):
    """grad phi(z) = -amplitude * (z / width) * exp(-|z|^2 / (2 width^2)); attractive for amplitude > 0"""
    kind: Literal['gaussian_grad'] = 'gaussian_grad'
    amplitude: float = 1.0
    width: float = 0.25

    @model_validator(mode='after')
    def _validate(self):
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if not self.width > 0:
            raise ValueError("width must be positive")
        return self._check_bounds()

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        scaled = z / self.width
        envelope = np.exp(-0.5 * np.sum(scaled * scaled, axis=-1, keepdims=True))
        return -self.amplitude * scaled * envelope

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude) * math.exp(-0.5)

    @property
    def lipschitz(self) -> float:
        return abs(self.amplitude) / self.width

    @property
    def probe_radius(self) -> float:
        return 4.0 * self.width


class MorseGradKernel(_KernelBase):
    """
    Gradient of the Morse potential
        phi(z) = C_r exp(-s/l_r) - C_a exp(-s/l_a),   s = sqrt(|z|^2 + core^2)
    The core length keeps grad phi Lipschitz at the origin.
    """
    kind: Literal['morse_grad'] = 'morse_grad'
    attraction: float = 1.0
    attraction_length: float = 0.5
    repulsion: float = 0.5
    repulsion_length: float = 0.1
    core: float = 0.05

    @model_validator(mode='after')
    def _validate(self):
        if self.attraction < 0 or self.repulsion < 0:
            raise ValueError("Morse strengths must be nonnegative")
        if not (self.attraction_length > 0 and self.repulsion_length > 0):
            raise ValueError("Morse lengths must be positive")
        if not self.core > 0:
            raise ValueError("core length must be positive")
        return self._check_bounds()

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        s = np.sqrt(np.sum(z * z, axis=-1, keepdims=True) + self.core ** 2)
        radial = (-self.repulsion / self.repulsion_length * np.exp(-s / self.repulsion_length)
                  + self.attraction / self.attraction_length * np.exp(-s / self.attraction_length))
        return radial * z / s

    @property
    def _slope_bound(self) -> float:
        return self.repulsion / self.repulsion_length + self.attraction / self.attraction_length

    @property
    def sup_norm(self) -> float:
        return self._slope_bound

    @property
    def lipschitz(self) -> float:
        curvature = self.repulsion / self.repulsion_length ** 2 + self.attraction / self.attraction_length ** 2
        return 2.0 * self._slope_bound / self.core + curvature

    @property
    def probe_radius(self) -> float:
        return 4.0 * max(self.attraction_length, self.repulsion_length)


class PolynomialTaperKernel(_KernelBase):
    """grad phi(z) = -amplitude * z * (1 - |z|^2/R^2)^2 inside |z| < R, zero outside"""
    kind: Literal['polynomial_taper'] = 'polynomial_taper'
    amplitude: float = 1.0
    radius: float = 0.5

    @model_validator(mode='after')
    def _validate(self):
        if not math.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        return self._check_bounds()

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        u = np.sum(z * z, axis=-1, keepdims=True) / self.radius ** 2
        taper = np.where(u < 1.0, (1.0 - u) ** 2, 0.0)
        return -self.amplitude * z * taper

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude) * self.radius * 16.0 / (25.0 * math.sqrt(5.0))

    @property
    def lipschitz(self) -> float:
        return abs(self.amplitude)

    @property
    def probe_radius(self) -> float:
        return 1.5 * self.radius


KernelSpec = Annotated[
    Union[GaussianGradKernel, MorseGradKernel, PolynomialTaperKernel],
    Field(discriminator='kind'),
]


def zero_kernel() -> GaussianGradKernel:
    """grad phi == 0"""
    return GaussianGradKernel(amplitude=0.0)
