"""
Sensitivity Service
Exact and mollified indicators of K(w), distances to the generalized boundary Theta(w),
and Monte Carlo checks of the compactness / enlargement / Lipschitz assumptions
"""

import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.special import gamma

from src.config import Config
from src.exceptions import InvalidInputError
from src.models.sensitivity import (
    FixedBallSensitivity,
    FixedConeSensitivity,
    MollificationParams,
    VaryingBallSensitivity,
    VaryingConeSensitivity,
)

logger = logging.getLogger(__name__)


def ball_volume(dimension: int, radius: float = 1.0) -> float:
    """Lebesgue measure of a d-dimensional ball"""
    return math.pi ** (dimension / 2.0) / gamma(dimension / 2.0 + 1.0) * radius ** dimension


def shell_volume(dimension: int, radius: float, width: float) -> float:
    """|d^width B(0, radius)|: measure of the closed shell of half-width `width` around the sphere"""
    inner = max(radius - width, 0.0)
    return ball_volume(dimension, radius + width) - ball_volume(dimension, inner)


def uniform_in_ball(rng: np.random.Generator, n: int, dimension: int, radius: float) -> np.ndarray:
    directions = rng.standard_normal((n, dimension))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / dimension)
    return directions * radii[:, None]


def _segment_distance(z, a, b):
    """Distance from points z (..., d) to segments [a, b] (broadcastable)"""
    direction = b - a
    length_sq = np.sum(direction * direction, axis=-1, keepdims=True)
    safe = np.where(length_sq > 0, length_sq, 1.0)
    t = np.clip(np.sum((z - a) * direction, axis=-1, keepdims=True) / safe, 0.0, 1.0)
    return np.linalg.norm(z - a - t * direction, axis=-1)


class SensitivityService:
    """Geometry of sensitivity regions K(w) and their generalized boundaries"""

    def __init__(self, quadrature_nodes: int = Config.QUADRATURE_NODES):
        self.quadrature_nodes = quadrature_nodes

    # ------------------------------------------------------------------
    # Exact indicators and distances
    # ------------------------------------------------------------------

    def indicator(self, spec, w_value, offset) -> np.ndarray:
        """1 iff offset lies in the closed set K(w_value); vectorised over leading axes"""
        offset = np.asarray(offset, dtype=float)
        w_value = np.asarray(w_value, dtype=float)
        norm = np.linalg.norm(offset, axis=-1)

        if isinstance(spec, FixedBallSensitivity):
            return norm <= spec.radius
        if isinstance(spec, VaryingBallSensitivity):
            return norm <= spec.radius_at(np.linalg.norm(w_value, axis=-1))
        if isinstance(spec, (FixedConeSensitivity, VaryingConeSensitivity)):
            w_norm = self._cone_w_norm(w_value)
            theta = spec.angle_at(w_norm)
            alpha = self._angle_to(offset, norm, w_value, w_norm)
            return (norm <= spec.radius) & ((norm == 0.0) | (alpha <= theta))
        raise InvalidInputError(f"Unsupported sensitivity kind: {type(spec).__name__}")

    def _cone_w_norm(self, w_value):
        w_norm = np.linalg.norm(w_value, axis=-1)
        if np.any(w_norm == 0.0):
            raise InvalidInputError("Cone orientation w must be nonzero (direction undefined)")
        return w_norm

    def _angle_to(self, offset, norm, w_value, w_norm):
        safe = np.where(norm > 0, norm, 1.0)
        cosine = np.sum(offset * w_value, axis=-1) / (safe * w_norm)
        return np.where(norm > 0, np.arccos(np.clip(cosine, -1.0, 1.0)), 0.0)

    def boundary_distance(self, spec, w_value, offset) -> np.ndarray:
        """Distance from offset to the topological boundary of K(w_value)"""
        offset = np.asarray(offset, dtype=float)
        w_value = np.asarray(w_value, dtype=float)
        norm = np.linalg.norm(offset, axis=-1)

        if isinstance(spec, FixedBallSensitivity):
            return np.abs(norm - spec.radius)
        if isinstance(spec, VaryingBallSensitivity):
            return np.abs(norm - spec.radius_at(np.linalg.norm(w_value, axis=-1)))
        if isinstance(spec, (FixedConeSensitivity, VaryingConeSensitivity)):
            w_norm = self._cone_w_norm(w_value)
            theta = spec.angle_at(w_norm)
            alpha = self._angle_to(offset, norm, w_value, w_norm)
            return self._cone_boundary_distance(norm, alpha, theta, spec.radius)
        raise InvalidInputError(f"Unsupported sensitivity kind: {type(spec).__name__}")

    def _cone_boundary_distance(self, rho, alpha, theta, radius):
        """
        Boundary of C(r, w, theta) = spherical cap (angle <= theta) plus the lateral
        generators at angle theta; the nearest point lies in the plane of (offset, w).
        """
        rim = np.sqrt(np.maximum(rho ** 2 + radius ** 2 - 2.0 * rho * radius * np.cos(alpha - theta), 0.0))
        cap = np.where(alpha <= theta, np.abs(rho - radius), rim)

        beta = np.abs(alpha - theta)
        along = rho * np.cos(beta)
        tip = np.sqrt(np.maximum(rho ** 2 + radius ** 2 - 2.0 * rho * radius * np.cos(beta), 0.0))
        lateral = np.where(along < 0.0, rho, np.where(along > radius, tip, rho * np.sin(beta)))
        # A full-angle cone is the ball: no lateral part
        lateral = np.where(theta >= math.pi, np.inf, lateral)
        return np.minimum(cap, lateral)

    def segment_endpoints(self, spec, w_value):
        """Endpoints a(w), b(w) of the extra segment R(w) and the mask where it is active"""
        w_value = np.asarray(w_value, dtype=float)
        w_norm = np.linalg.norm(w_value, axis=-1, keepdims=True)
        unit = w_value / np.where(w_norm > 0, w_norm, 1.0)
        a = -spec.radius * unit
        b = 2.0 * spec.radius * (w_norm - 1.0) * unit
        active = (w_norm[..., 0] > 0.5) & (w_norm[..., 0] < 1.0)
        return a, b, active

    def theta_distance(self, spec, w_value, offset) -> np.ndarray:
        """Distance from offset to the generalized boundary Theta(w_value)"""
        distance = self.boundary_distance(spec, w_value, offset)
        if isinstance(spec, VaryingConeSensitivity):
            offset = np.asarray(offset, dtype=float)
            a, b, active = self.segment_endpoints(spec, w_value)
            seam = _segment_distance(offset, a, b)
            distance = np.where(active, np.minimum(distance, seam), distance)
        return distance

    def theta_enlarged_indicator(self, spec, w_value, offset, u: float) -> np.ndarray:
        """1 iff dist(offset, Theta(w_value)) <= u"""
        if u < 0:
            raise InvalidInputError(f"Enlargement radius must be nonnegative, got {u}")
        return self.theta_distance(spec, w_value, offset) <= u

    def boundary_shell_indicator(self, spec, w_value, offset, width: float) -> np.ndarray:
        """Indicator of the width-boundary d^width K(w_value)"""
        return self.boundary_distance(spec, w_value, offset) <= width

    # ------------------------------------------------------------------
    # Mollified indicators
    # ------------------------------------------------------------------

    def _bump_nodes(self, dimension: int, nodes: int):
        """Tensor Gauss-Legendre nodes on [-1, 1]^d weighted by the standard bump"""
        points, weights = np.polynomial.legendre.leggauss(nodes)
        grids = np.meshgrid(*([points] * dimension), indexing='ij')
        xi = np.stack([g.ravel() for g in grids], axis=-1)
        wgrids = np.meshgrid(*([weights] * dimension), indexing='ij')
        tensor = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
        r2 = np.sum(xi * xi, axis=-1)
        inside = r2 < 1.0
        bump = np.zeros_like(r2)
        bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        weight = tensor * bump
        keep = weight > 0
        return xi[keep], weight[keep]

    def mollified_indicator(self, spec, params: MollificationParams, w_value, offset) -> np.ndarray:
        """
        1^{eps,eta}_{K(w)}(offset): average of 1_{K(w - eta*xi')}(offset + eps*xi)
        over the two bump mollifiers, evaluated by tensor quadrature.
        """
        offset = np.asarray(offset, dtype=float)
        w_value = np.asarray(w_value, dtype=float)
        d = offset.shape[-1]
        xi, weight = self._bump_nodes(d, params.nodes)

        spatial = offset[..., None, :] + params.epsilon * xi
        if isinstance(spec, FixedBallSensitivity):
            hits = self.indicator(spec, w_value[..., None, :], spatial)
            value = np.sum(weight * hits, axis=-1) / np.sum(weight)
        else:
            oriented = w_value[..., None, :] - params.eta * xi
            hits = self.indicator(spec, oriented[..., None, :, :], spatial[..., :, None, :])
            pair = weight[:, None] * weight[None, :]
            value = np.sum(pair * hits, axis=(-2, -1)) / np.sum(pair)
        return np.clip(value, 0.0, 1.0)

    def mollified_indicator_eps(self, spec, epsilon: float, w_value, offset, nodes: int = None) -> np.ndarray:
        """1^{eps}_{K(w)}(offset): spatial mollification only"""
        if not epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        offset = np.asarray(offset, dtype=float)
        w_value = np.asarray(w_value, dtype=float)
        xi, weight = self._bump_nodes(offset.shape[-1], nodes or self.quadrature_nodes)
        hits = self.indicator(spec, w_value[..., None, :], offset[..., None, :] + epsilon * xi)
        return np.clip(np.sum(weight * hits, axis=-1) / np.sum(weight), 0.0, 1.0)

    def mollified_shell_indicator(self, spec, epsilon: float, width: float, w_value, offset, nodes: int = None):
        """1^{eps} of the width-boundary d^width K(w)"""
        offset = np.asarray(offset, dtype=float)
        w_value = np.asarray(w_value, dtype=float)
        xi, weight = self._bump_nodes(offset.shape[-1], nodes or self.quadrature_nodes)
        hits = self.boundary_shell_indicator(spec, w_value[..., None, :], offset[..., None, :] + epsilon * xi, width)
        return np.sum(weight * hits, axis=-1) / np.sum(weight)

    # ------------------------------------------------------------------
    # Rope inequalities
    # ------------------------------------------------------------------

    def rope_inequality_check(self, spec, w_value, x1, y1, x2, y2) -> np.ndarray:
        """
        |1_K(y1-x1) - 1_K(y2-x2)| <= 1_{d^{2|x1-x2|}K}(y1-x1) + 1_{d^{2|y1-y2|}K}(y1-x1)
        for K frozen at w_value. Both sides are integers, so no tolerance is used.
        """
        x1, y1, x2, y2 = (np.asarray(v, dtype=float) for v in (x1, y1, x2, y2))
        w_value = np.asarray(w_value, dtype=float)
        z1 = y1 - x1
        z2 = y2 - x2
        lhs = np.abs(self.indicator(spec, w_value, z1).astype(int) - self.indicator(spec, w_value, z2).astype(int))
        gap_x = 2.0 * np.linalg.norm(x1 - x2, axis=-1)
        gap_y = 2.0 * np.linalg.norm(y1 - y2, axis=-1)
        rhs = (self.boundary_shell_indicator(spec, w_value, z1, gap_x).astype(int)
               + self.boundary_shell_indicator(spec, w_value, z1, gap_y).astype(int))
        return lhs <= rhs

    def mollified_rope_check(self, spec, epsilon: float, w_value, x1, y1, x2, y2, slack: float = 1e-12) -> np.ndarray:
        """Rope inequality with every indicator replaced by its eps-mollification"""
        x1, y1, x2, y2 = (np.asarray(v, dtype=float) for v in (x1, y1, x2, y2))
        z1 = y1 - x1
        z2 = y2 - x2
        lhs = np.abs(self.mollified_indicator_eps(spec, epsilon, w_value, z1)
                     - self.mollified_indicator_eps(spec, epsilon, w_value, z2))
        gap_x = 2.0 * np.linalg.norm(x1 - x2, axis=-1)
        gap_y = 2.0 * np.linalg.norm(y1 - y2, axis=-1)
        rhs = (self.mollified_shell_indicator(spec, epsilon, gap_x[..., None], w_value, z1)
               + self.mollified_shell_indicator(spec, epsilon, gap_y[..., None], w_value, z1))
        return lhs <= rhs + slack

    # ------------------------------------------------------------------
    # Monte Carlo measures
    # ------------------------------------------------------------------

    def symmetric_difference_measure(self, spec, w1, w2, mc_samples: int,
                                     rng: np.random.Generator) -> Tuple[float, float]:
        """Unbiased MC estimate of |K(w1) Δ K(w2)| over the bounding ball"""
        if mc_samples < 1000:
            raise InvalidInputError("symmetric_difference_measure needs at least 10^3 samples")
        d = spec.dimension
        radius = spec.support_radius
        points = uniform_in_ball(rng, mc_samples, d, radius)
        w1 = np.broadcast_to(np.asarray(w1, dtype=float), points.shape)
        w2 = np.broadcast_to(np.asarray(w2, dtype=float), points.shape)
        differs = self.indicator(spec, w1, points) != self.indicator(spec, w2, points)
        return self._bernoulli_estimate(differs, ball_volume(d, radius))

    def enlargement_measure(self, spec, w_value, u: float, mc_samples: int,
                            rng: np.random.Generator) -> Tuple[float, float]:
        """MC estimate of |Theta(w)^{u,+}|"""
        d = spec.dimension
        radius = spec.support_radius + u
        points = uniform_in_ball(rng, mc_samples, d, radius)
        w = np.broadcast_to(np.asarray(w_value, dtype=float), points.shape)
        hits = self.theta_enlarged_indicator(spec, w, points, u)
        return self._bernoulli_estimate(hits, ball_volume(d, radius))

    def mollification_error_integral(self, spec, epsilon: float, w_value, mc_samples: int,
                                     rng: np.random.Generator) -> Tuple[float, float]:
        """MC estimate of the integral of |1^eps_K - 1_K| over the whole space"""
        d = spec.dimension
        half = spec.support_radius + epsilon
        points = rng.uniform(-half, half, size=(mc_samples, d))
        w = np.broadcast_to(np.asarray(w_value, dtype=float), points.shape)
        gap = np.abs(self.mollified_indicator_eps(spec, epsilon, w, points) - self.indicator(spec, w, points))
        volume = (2.0 * half) ** d
        return volume * float(gap.mean()), volume * float(gap.std(ddof=1)) / math.sqrt(mc_samples)

    def orientation_mollification_gap(self, spec, epsilon: float, eta: float, w_value, mc_samples: int,
                                      rng: np.random.Generator, nodes: int = 5) -> Tuple[float, float]:
        """MC estimate of the integral of |1^{eps,eta} - 1^eps| dy"""
        d = spec.dimension
        half = spec.support_radius + epsilon
        points = rng.uniform(-half, half, size=(mc_samples, d))
        w = np.broadcast_to(np.asarray(w_value, dtype=float), points.shape)
        params = MollificationParams(epsilon=epsilon, eta=eta, nodes=nodes)
        gap = np.abs(self.mollified_indicator(spec, params, w, points)
                     - self.mollified_indicator_eps(spec, epsilon, w, points, nodes=nodes))
        volume = (2.0 * half) ** d
        return volume * float(gap.mean()), volume * float(gap.std(ddof=1)) / math.sqrt(mc_samples)

    def mollification_bound_check(self, spec, w_value, epsilons: Sequence[float], mc_samples: int,
                                  rng: np.random.Generator) -> Dict:
        """
        Compare the mollification error integral of |1^eps_K - 1_K| with the
        measure of the 2eps-boundary of K(w) at each eps. The shell is exact for a
        fixed ball and a Monte Carlo estimate otherwise.
        """
        d = spec.dimension
        w_value = np.asarray(w_value, dtype=float)
        rows = []
        for epsilon in epsilons:
            error, error_se = self.mollification_error_integral(spec, epsilon, w_value, mc_samples, rng)
            if isinstance(spec, FixedBallSensitivity):
                shell, shell_se = shell_volume(d, spec.radius, 2.0 * epsilon), 0.0
            else:
                radius = spec.support_radius + 2.0 * epsilon
                points = uniform_in_ball(rng, mc_samples, d, radius)
                w = np.broadcast_to(w_value, points.shape)
                shell, shell_se = self._bernoulli_estimate(
                    self.boundary_shell_indicator(spec, w, points, 2.0 * epsilon), ball_volume(d, radius))
            slack = 3.0 * math.hypot(error_se, shell_se)
            rows.append({'epsilon': float(epsilon), 'error': error, 'error_se': error_se,
                         'shell': shell, 'shell_se': shell_se, 'ok': bool(error <= shell + slack)})
        orientation_gap = None
        if not isinstance(spec, FixedBallSensitivity):
            epsilon = min(epsilons)
            orientation_gap, _ = self.orientation_mollification_gap(spec, epsilon, epsilon, w_value,
                                                                 max(mc_samples // 4, 2), rng)
        return {'rows': rows, 'orientation_gap': orientation_gap,
                'violations': [row['epsilon'] for row in rows if not row['ok']]}

    def _bernoulli_estimate(self, hits, volume):
        n = hits.size
        p = float(np.count_nonzero(hits)) / n
        return volume * p, volume * math.sqrt(p * (1.0 - p) / n)

    # ------------------------------------------------------------------
    # Generalized boundary sampling and containment
    # ------------------------------------------------------------------

    def sample_theta(self, spec, w_value, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n points on Theta(w_value), pieces weighted by their measure"""
        w_value = np.asarray(w_value, dtype=float)
        d = spec.dimension

        if isinstance(spec, (FixedBallSensitivity, VaryingBallSensitivity)):
            radius = float(spec.radius_at(np.linalg.norm(w_value)))
            directions = rng.standard_normal((n, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            return radius * directions

        w_norm = float(self._cone_w_norm(w_value))
        theta = float(spec.angle_at(w_norm))
        r = spec.radius
        unit = w_value / w_norm
        basis = self._orthonormal_completion(unit)

        pieces: List[Tuple[float, str]] = []
        if d == 2:
            pieces.append((2.0 * theta * r, 'cap'))
            if theta < math.pi:
                pieces.append((2.0 * r, 'lateral'))
        else:
            pieces.append((2.0 * math.pi * r * r * (1.0 - math.cos(theta)), 'cap'))
            if theta < math.pi:
                pieces.append((math.pi * r * r * math.sin(theta), 'lateral'))
        seam = None
        if isinstance(spec, VaryingConeSensitivity):
            a, b, active = self.segment_endpoints(spec, w_value)
            if bool(active):
                seam = (a, b)
                length = float(np.linalg.norm(b - a))
                pieces.append((length * (r if d == 3 else 1.0), 'seam'))

        measures = np.array([m for m, _ in pieces])
        counts = rng.multinomial(n, measures / measures.sum())
        samples = []
        for (_, name), count in zip(pieces, counts):
            if count == 0:
                continue
            if name == 'cap':
                samples.append(self._sample_cap(r, theta, unit, basis, count, rng, d))
            elif name == 'lateral':
                samples.append(self._sample_lateral(r, theta, unit, basis, count, rng, d))
            else:
                s = rng.random((count, 1))
                samples.append(seam[0] + s * (seam[1] - seam[0]))
        return np.vstack(samples)

    def _orthonormal_completion(self, unit):
        d = unit.shape[0]
        if d == 2:
            return np.array([[-unit[1], unit[0]]])
        helper = np.eye(3)[np.argmin(np.abs(unit))]
        e1 = np.cross(unit, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(unit, e1)
        return np.vstack([e1, e2])

    def _sample_cap(self, r, theta, unit, basis, count, rng, d):
        if d == 2:
            phi = rng.uniform(-theta, theta, size=count)
            return r * (np.cos(phi)[:, None] * unit + np.sin(phi)[:, None] * basis[0])
        cos_polar = rng.uniform(math.cos(theta), 1.0, size=count)
        sin_polar = np.sqrt(np.maximum(1.0 - cos_polar ** 2, 0.0))
        azimuth = rng.uniform(0.0, 2.0 * math.pi, size=count)
        return r * (cos_polar[:, None] * unit
                    + sin_polar[:, None] * (np.cos(azimuth)[:, None] * basis[0] + np.sin(azimuth)[:, None] * basis[1]))

    def _sample_lateral(self, r, theta, unit, basis, count, rng, d):
        t = r * rng.random(count)
        if d == 2:
            sign = rng.choice([-1.0, 1.0], size=count)
            direction = math.cos(theta) * unit + math.sin(theta) * sign[:, None] * basis[0]
        else:
            t = r * np.sqrt(rng.random(count))
            azimuth = rng.uniform(0.0, 2.0 * math.pi, size=count)
            direction = (math.cos(theta) * unit
                         + math.sin(theta) * (np.cos(azimuth)[:, None] * basis[0] + np.sin(azimuth)[:, None] * basis[1]))
        return t[:, None] * direction

    def theta_containment_radius(self, spec, w1, w2, samples: int, rng: np.random.Generator) -> float:
        """Sampled radius u with Theta(w1) contained in Theta(w2)^{u,+}"""
        points = self.sample_theta(spec, w1, samples, rng)
        w2 = np.broadcast_to(np.asarray(w2, dtype=float), points.shape)
        return float(np.max(self.theta_distance(spec, w2, points)))

    # ------------------------------------------------------------------
    # Constant fitting for the assumption sweeps
    # ------------------------------------------------------------------

    def fit_linear_constant(self, scales: Sequence[float], estimates: Sequence[float],
                            std_errors: Sequence[float]) -> Dict:
        """
        Fit a single C with estimate <= C * scale across a sweep and flag any point
        where estimate/scale grows by more than 3 standard errors as the scale shrinks.
        """
        scales = np.asarray(scales, dtype=float)
        order = np.argsort(-scales)
        scales = scales[order]
        estimates = np.asarray(estimates, dtype=float)[order]
        std_errors = np.asarray(std_errors, dtype=float)[order]

        ratios = estimates / scales
        ratio_errors = std_errors / scales
        violations = []
        for k in range(len(ratios) - 1):
            jump = ratios[k + 1] - ratios[k]
            band = 3.0 * math.hypot(ratio_errors[k], ratio_errors[k + 1])
            if jump > band:
                violations.append({'scale': float(scales[k + 1]), 'jump': float(jump), 'band': float(band)})
        if violations:
            logger.warning(f"Linear-constant sweep flagged {len(violations)} upward jumps")
        return {
            'constant': float(ratios.max()),
            'scales': scales.tolist(),
            'ratios': ratios.tolist(),
            'ratio_std_errors': ratio_errors.tolist(),
            'violations': violations,
        }


# Global instance for use across the application
sensitivity_service = SensitivityService()
