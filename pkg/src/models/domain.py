"""
Convex domain models
Ball, axis-aligned box and half-space intersection specs, serialised under the `domain` key
"""

from functools import cached_property
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import linprog
from typing_extensions import Annotated

# Directions used by the sampled boundedness test for half-space intersections
RAY_TEST_DIRECTIONS = 4096


class _DomainBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return self.model_dump(mode='json')


class BallDomain(_DomainBase):
    """Closed Euclidean ball"""
    kind: Literal['ball'] = 'ball'
    center: List[float]
    radius: float

    @model_validator(mode='after')
    def _validate(self):
        if not self.center:
            raise ValueError("ball center must have at least one coordinate")
        if not np.all(np.isfinite(self.center)):
            raise ValueError("ball center must be finite")
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        return self

    @property
    def dimension(self) -> int:
        return len(self.center)

    @cached_property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def contains(self, points, tol=0.0):
        points = np.asarray(points, dtype=float)
        return np.linalg.norm(points - self.center_array, axis=-1) <= self.radius + tol

    def diameter(self) -> float:
        return 2.0 * self.radius

    def bounding_box(self):
        return self.center_array - self.radius, self.center_array + self.radius


class BoxDomain(_DomainBase):
    """Closed axis-aligned box [lo, hi]"""
    kind: Literal['box'] = 'box'
    lo: List[float]
    hi: List[float]

    @model_validator(mode='after')
    def _validate(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("box lo and hi must have the same positive length")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("box corners must be finite")
        if not np.all(np.asarray(self.lo) < np.asarray(self.hi)):
            raise ValueError(f"box requires lo < hi componentwise, got lo={self.lo} hi={self.hi}")
        return self

    @property
    def dimension(self) -> int:
        return len(self.lo)

    @cached_property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @cached_property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    @property
    def lengths(self) -> np.ndarray:
        return self.hi_array - self.lo_array

    def contains(self, points, tol=0.0):
        points = np.asarray(points, dtype=float)
        inside = (points >= self.lo_array - tol) & (points <= self.hi_array + tol)
        return np.all(inside, axis=-1)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.lengths))

    def bounding_box(self):
        return self.lo_array.copy(), self.hi_array.copy()


class HalfspaceDomain(_DomainBase):
    """
    Intersection of half-spaces {x : <n_k, x> <= b_k} with outward unit normals n_k.
    Boundedness is checked with a sampled ray test, nonempty interior through the
    Chebyshev center.
    """
    kind: Literal['halfspaces'] = 'halfspaces'
    normals: List[List[float]]
    offsets: List[float]

    @model_validator(mode='after')
    def _validate(self):
        normals = np.asarray(self.normals, dtype=float)
        offsets = np.asarray(self.offsets, dtype=float)
        if normals.ndim != 2 or normals.shape[0] != offsets.shape[0] or normals.shape[0] == 0:
            raise ValueError("halfspaces need one offset per normal")
        if not (np.all(np.isfinite(normals)) and np.all(np.isfinite(offsets))):
            raise ValueError("halfspace normals and offsets must be finite")
        if not np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12):
            raise ValueError("halfspace normals must be unit vectors")

        # Sampled ray test: every direction must eventually leave some half-space
        d = normals.shape[1]
        rng = np.random.default_rng(0)
        directions = rng.standard_normal((RAY_TEST_DIRECTIONS, d))
        directions = np.vstack([directions, np.eye(d), -np.eye(d)])
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        exits = (directions @ normals.T).max(axis=1)
        if np.any(exits <= 0.0):
            raise ValueError("halfspace intersection is unbounded")

        if self.inradius <= 0.0:
            raise ValueError("halfspace intersection has empty interior")
        return self

    @property
    def dimension(self) -> int:
        return len(self.normals[0])

    @cached_property
    def normal_array(self) -> np.ndarray:
        return np.asarray(self.normals, dtype=float)

    @cached_property
    def offset_array(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=float)

    @cached_property
    def _chebyshev(self):
        # maximise r subject to <n_k, x> + r <= b_k
        normals = self.normal_array
        d = normals.shape[1]
        c = np.zeros(d + 1)
        c[-1] = -1.0
        a_ub = np.hstack([normals, np.ones((normals.shape[0], 1))])
        bounds = [(None, None)] * d + [(0, None)]
        result = linprog(c, A_ub=a_ub, b_ub=self.offset_array, bounds=bounds, method='highs')
        if not result.success:
            return np.zeros(d), 0.0
        return result.x[:d], float(result.x[-1])

    @property
    def interior_point(self) -> np.ndarray:
        return self._chebyshev[0].copy()

    @property
    def inradius(self) -> float:
        return self._chebyshev[1]

    @cached_property
    def _bounds(self):
        normals = self.normal_array
        d = normals.shape[1]
        lo = np.empty(d)
        hi = np.empty(d)
        for axis in range(d):
            c = np.zeros(d)
            c[axis] = 1.0
            low = linprog(c, A_ub=normals, b_ub=self.offset_array, bounds=[(None, None)] * d, method='highs')
            high = linprog(-c, A_ub=normals, b_ub=self.offset_array, bounds=[(None, None)] * d, method='highs')
            lo[axis] = low.x[axis]
            hi[axis] = high.x[axis]
        return lo, hi

    def contains(self, points, tol=0.0):
        points = np.asarray(points, dtype=float)
        slack = points @ self.normal_array.T - self.offset_array
        return np.all(slack <= tol, axis=-1)

    def diameter(self) -> float:
        # Diagonal of the bounding box: an upper bound on the true diameter
        lo, hi = self._bounds
        return float(np.linalg.norm(hi - lo))

    def bounding_box(self):
        lo, hi = self._bounds
        return lo.copy(), hi.copy()


DomainSpec = Annotated[Union[BallDomain, BoxDomain, HalfspaceDomain], Field(discriminator='kind')]


def unit_box(dimension: int = 2, lo: float = 0.0, hi: float = 1.0) -> BoxDomain:
    """Convenience constructor for [lo, hi]^d"""
    return BoxDomain(lo=[lo] * dimension, hi=[hi] * dimension)


def polygon_domain(normals, offsets) -> HalfspaceDomain:
    """Build a half-space intersection, normalising the given normals"""
    normals = np.asarray(normals, dtype=float)
    scale = np.linalg.norm(normals, axis=1)
    return HalfspaceDomain(
        normals=(normals / scale[:, None]).tolist(),
        offsets=(np.asarray(offsets, dtype=float) / scale).tolist(),
    )


def boundary_tolerance(domain, relative: Optional[float] = None) -> float:
    """Absolute boundary tolerance from the diameter-normalised one"""
    from src.config import Config
    relative = Config.BOUNDARY_TOL if relative is None else relative
    return relative * domain.diameter()
