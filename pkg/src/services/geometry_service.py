"""
Geometry Service
Euclidean projection onto convex domains, outward normals, and the projected
Euler-Maruyama (discrete Skorokhod) reflection step used by every particle update
"""

import logging
from typing import Tuple

import numpy as np

from src.config import Config
from src.exceptions import DomainError, InvalidInputError, PreconditionError
from src.models.domain import BallDomain, BoxDomain, HalfspaceDomain, boundary_tolerance

logger = logging.getLogger(__name__)


class GeometryService:
    """Projection, normals and reflection for Ball, Box and HalfspaceIntersection domains"""

    def __init__(self, projection_tol: float = Config.PROJECTION_TOL,
                 max_iter: int = Config.PROJECTION_MAX_ITER):
        self.projection_tol = projection_tol
        self.max_iter = max_iter

    def project(self, points, domain) -> np.ndarray:
        """
        Project one point (d,) or many points (..., d) onto the closed domain.
        Points already in the closure are returned unchanged.
        """
        points = np.asarray(points, dtype=float)
        self._check_points(points, domain)

        if isinstance(domain, BallDomain):
            return self._project_ball(points, domain)
        if isinstance(domain, BoxDomain):
            return np.clip(points, domain.lo_array, domain.hi_array)
        if isinstance(domain, HalfspaceDomain):
            flat = points.reshape(-1, domain.dimension)
            return self._project_halfspaces(flat, domain).reshape(points.shape)
        raise InvalidInputError(f"Unsupported domain kind: {type(domain).__name__}")

    def _project_ball(self, points, domain):
        offset = points - domain.center_array
        dist = np.linalg.norm(offset, axis=-1, keepdims=True)
        outside = dist > domain.radius
        scale = np.where(outside, domain.radius / np.where(outside, dist, 1.0), 1.0)
        projected = domain.center_array + offset * scale
        return np.where(outside, projected, points)

    def _project_halfspaces(self, points, domain):
        """
        Cyclic Dykstra projection onto the intersection, vectorised over points.
        Every point strictly outside is projected, however small the violation;
        projection_tol only bounds the iteration.
        """
        normals = domain.normal_array
        offsets = domain.offset_array
        tol = self.projection_tol
        result = points.copy()

        active = ~domain.contains(points)
        if not np.any(active):
            return result

        x = points[active].copy()
        increments = np.zeros((normals.shape[0],) + x.shape)
        converged = False
        for iteration in range(self.max_iter):
            x_start = x.copy()
            for k in range(normals.shape[0]):
                z = x + increments[k]
                violation = np.maximum(z @ normals[k] - offsets[k], 0.0)
                x = z - violation[:, None] * normals[k]
                increments[k] = z - x
            change = np.max(np.abs(x - x_start))
            worst = np.max(x @ normals.T - offsets)
            if change <= tol and worst <= tol:
                converged = True
                break

        if not converged:
            logger.warning(f"Dykstra projection hit the iteration cap ({self.max_iter}); "
                           f"last change {change:.3e}, worst violation {worst:.3e}")
        result[active] = x
        return result

    def outward_normal(self, point, domain) -> np.ndarray:
        """
        Outward unit normal at a boundary point. At Box edges and corners (and at
        polytope vertices) this is the normalised sum of the active face normals.
        """
        point = np.asarray(point, dtype=float)
        self._check_points(point, domain)
        tol = boundary_tolerance(domain)

        if isinstance(domain, BallDomain):
            offset = point - domain.center_array
            dist = np.linalg.norm(offset)
            if abs(dist - domain.radius) > tol:
                raise DomainError(f"Point is {abs(dist - domain.radius):.3e} away from the ball boundary")
            return offset / dist

        if isinstance(domain, BoxDomain):
            if not domain.contains(point, tol=tol):
                raise DomainError("Point lies outside the box")
            normal = np.zeros(domain.dimension)
            normal -= (np.abs(point - domain.lo_array) <= tol).astype(float)
            normal += (np.abs(point - domain.hi_array) <= tol).astype(float)
            return self._normalise_selection(normal)

        if isinstance(domain, HalfspaceDomain):
            slack = domain.normal_array @ point - domain.offset_array
            if np.any(slack > tol):
                raise DomainError("Point lies outside the halfspace intersection")
            active = np.abs(slack) <= tol
            return self._normalise_selection(domain.normal_array[active].sum(axis=0))

        raise InvalidInputError(f"Unsupported domain kind: {type(domain).__name__}")

    def _normalise_selection(self, normal):
        norm = np.linalg.norm(normal)
        if norm == 0.0:
            raise DomainError("Point is not within tolerance of the boundary")
        return normal / norm

    def reflected_step(self, x, drift, noise, dt: float, sigma: float, domain) -> Tuple[np.ndarray, np.ndarray]:
        """
        One projected Euler-Maruyama step:
            x_new = project(x + drift*dt + sqrt(2*sigma*dt)*noise)
            reflection = (pre-projection point) - x_new
        Works on a single point or on an (N, d) array of particles.
        """
        if not dt > 0:
            raise PreconditionError(f"dt must be positive, got {dt}")
        if not sigma >= 0:
            raise PreconditionError(f"sigma must be nonnegative, got {sigma}")
        x = np.asarray(x, dtype=float)
        self._check_points(x, domain)
        if not np.all(domain.contains(x, tol=boundary_tolerance(domain))):
            raise PreconditionError("reflected_step called with a point outside the closed domain")

        candidate = x + np.asarray(drift, dtype=float) * dt + np.sqrt(2.0 * sigma * dt) * np.asarray(noise, dtype=float)
        x_new = self.project(candidate, domain)
        return x_new, candidate - x_new

    def sample_boundary_points(self, domain, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n points on the boundary of the domain"""
        if n < 1:
            raise InvalidInputError(f"n must be at least 1, got {n}")
        d = domain.dimension

        if isinstance(domain, BallDomain):
            directions = rng.standard_normal((n, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            return domain.center_array + domain.radius * directions

        if isinstance(domain, BoxDomain):
            lengths = domain.lengths
            # Face areas: product of the other side lengths, two faces per axis
            areas = np.array([np.prod(np.delete(lengths, axis)) for axis in range(d)])
            probs = np.repeat(areas, 2) / (2.0 * areas.sum())
            faces = rng.choice(2 * d, size=n, p=probs)
            points = domain.lo_array + rng.random((n, d)) * lengths
            axes = faces // 2
            upper = faces % 2 == 1
            rows = np.arange(n)
            points[rows, axes] = np.where(upper, domain.hi_array[axes], domain.lo_array[axes])
            return points

        if isinstance(domain, HalfspaceDomain):
            origin = domain.interior_point
            directions = rng.standard_normal((n, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            rates = directions @ domain.normal_array.T
            room = domain.offset_array - domain.normal_array @ origin
            with np.errstate(divide='ignore', invalid='ignore'):
                hits = np.where(rates > 0, room / rates, np.inf)
            return origin + hits.min(axis=1)[:, None] * directions

        raise InvalidInputError(f"Unsupported domain kind: {type(domain).__name__}")

    def boundary_distance(self, points, domain) -> np.ndarray:
        """Distance from points in the closed domain to its boundary"""
        points = np.asarray(points, dtype=float)
        if isinstance(domain, BallDomain):
            return np.abs(domain.radius - np.linalg.norm(points - domain.center_array, axis=-1))
        if isinstance(domain, BoxDomain):
            gaps = np.minimum(points - domain.lo_array, domain.hi_array - points)
            return np.abs(gaps.min(axis=-1))
        if isinstance(domain, HalfspaceDomain):
            slack = domain.offset_array - points @ domain.normal_array.T
            return np.abs(slack.min(axis=-1))
        raise InvalidInputError(f"Unsupported domain kind: {type(domain).__name__}")

    def _check_points(self, points, domain):
        if points.shape[-1] != domain.dimension:
            raise InvalidInputError(
                f"Point dimension {points.shape[-1]} does not match domain dimension {domain.dimension}")
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("Points must have finite coordinates")


# Global instance for use across the application
geometry_service = GeometryService()
