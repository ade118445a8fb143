"""
Transport Service
Exact empirical Wasserstein distances between equal-size clouds (assignment and
bottleneck matching) and sampling-based W_p between a cloud and a grid density
"""

import logging
import math
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial.distance import cdist

from src.exceptions import InvalidInputError
from src.models.pde import GridDensity

logger = logging.getLogger(__name__)


class TransportService:
    """Optimal transport between empirical measures"""

    def cost_matrix(self, a, b) -> np.ndarray:
        a, b = self._check_clouds(a, b)
        return cdist(a, b)

    def wasserstein_p(self, a, b, p: float) -> float:
        """((1/n) min_pi sum |a_i - b_pi(i)|^p)^(1/p)"""
        if not p >= 1:
            raise InvalidInputError(f"p must be at least 1, got {p}")
        cost = self.cost_matrix(a, b) ** p
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean() ** (1.0 / p))

    def wasserstein_inf(self, a, b) -> float:
        """Bottleneck value min_pi max_i |a_i - b_pi(i)|"""
        cost = self.cost_matrix(a, b)
        n = cost.shape[0]
        levels = np.unique(cost)

        # Smallest level whose threshold graph has a perfect matching
        lo, hi = 0, levels.shape[0] - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self._has_perfect_matching(cost <= levels[mid], n):
                hi = mid
            else:
                lo = mid + 1
        return float(levels[lo])

    def _has_perfect_matching(self, allowed: np.ndarray, n: int) -> bool:
        matching = maximum_bipartite_matching(csr_matrix(allowed), perm_type='column')
        return int(np.count_nonzero(matching >= 0)) == n

    def wasserstein(self, a, b, p: float) -> float:
        return self.wasserstein_inf(a, b) if math.isinf(p) else self.wasserstein_p(a, b, p)

    def _check_clouds(self, a, b) -> Tuple[np.ndarray, np.ndarray]:
        a = np.asarray(getattr(a, 'positions', a), dtype=float)
        b = np.asarray(getattr(b, 'positions', b), dtype=float)
        if a.ndim != 2 or b.ndim != 2 or a.shape[0] == 0:
            raise InvalidInputError("clouds must be nonempty (n, d) arrays")
        if a.shape != b.shape:
            raise InvalidInputError(f"clouds must have equal size and dimension, got {a.shape} and {b.shape}")
        return a, b

    def sample_density(self, density: GridDensity, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. points: cell by mass, then uniform inside the cell"""
        masses = density.cell_masses
        total = masses.sum()
        if not total > 0:
            raise InvalidInputError("cannot sample a density with zero mass")
        cells = rng.choice(masses.shape[0], size=n, p=masses / total)
        jitter = rng.random((n, density.dimension)) - 0.5
        return density.centers[cells] + jitter * density.spacing

    def replica_distances(self, cloud, density: GridDensity, p: float, replicas: int,
                          rng: np.random.Generator) -> List[float]:
        """W_p(cloud, fresh density sample) per replica, in replica order"""
        if replicas < 1:
            raise InvalidInputError("replicas must be at least 1")
        positions = np.asarray(getattr(cloud, 'positions', cloud), dtype=float)
        return [self.wasserstein(positions, self.sample_density(density, positions.shape[0], rng), p)
                for _ in range(replicas)]

    def estimate_wp_cloud_vs_density(self, cloud, density: GridDensity, p: float, replicas: int,
                                     rng: np.random.Generator) -> Tuple[float, float]:
        """Mean and standard error of W_p(cloud, sample of density) over replicas"""
        values = np.asarray(self.replica_distances(cloud, density, p, replicas, rng))
        if values.shape[0] == 1:
            return float(values[0]), 0.0
        return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.shape[0]))


# Global instance for use across the application
transport_service = TransportService()
