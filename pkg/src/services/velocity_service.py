"""
Velocity Service
Nonlocal velocity V[mu](x) = int grad phi(x - y) 1_{K(w(x))}(y - x) mu(dy) for particle
clouds (naive and binned sums) and for grid densities (direct midpoint sum or FFT stencil)
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from src.config import Config
from src.exceptions import ConfigurationError, InvalidInputError
from src.models.particles import ParticleCloud
from src.models.pde import GridDensity
from src.models.sensitivity import MollificationParams
from src.services.sensitivity_service import sensitivity_service

logger = logging.getLogger(__name__)


@dataclass
class BinnedIndex:
    """Particles bucketed on a regular grid of side bin_width; bucket contents in ascending index"""
    bin_width: float
    origin: np.ndarray
    buckets: Dict[Tuple[int, ...], np.ndarray]
    positions: np.ndarray

    def bin_of(self, point) -> np.ndarray:
        return np.floor((np.asarray(point, dtype=float) - self.origin) / self.bin_width).astype(int)

    def candidates(self, point) -> np.ndarray:
        """Indices of particles in the 3^d bins around the point, ascending"""
        home = self.bin_of(point)
        found = []
        for shift in itertools.product((-1, 0, 1), repeat=home.shape[0]):
            bucket = self.buckets.get(tuple(home + np.asarray(shift)))
            if bucket is not None:
                found.append(bucket)
        if not found:
            return np.empty(0, dtype=int)
        return np.sort(np.concatenate(found))


class VelocityService:
    """Evaluation of the nonlocal velocity field"""

    def __init__(self, chunk: int = Config.VELOCITY_CHUNK):
        self.chunk = chunk

    # ------------------------------------------------------------------
    # Empirical measures
    # ------------------------------------------------------------------

    def _masked_sum(self, x, sources, spec, kernel) -> np.ndarray:
        """
        Sum over sources of grad phi(x - y) 1_K(y - x) in ascending source order.
        cumsum accumulates left to right, so dropping zero terms does not change the result.
        """
        w = spec.orientation_at(x)
        offsets = sources[None, :, :] - x[:, None, :]
        mask = sensitivity_service.indicator(spec, w[:, None, :], offsets)
        terms = np.where(mask[..., None], kernel.gradient(-offsets), 0.0)
        if terms.shape[1] == 0:
            return np.zeros((x.shape[0], x.shape[1]))
        return np.cumsum(terms, axis=1)[:, -1, :]

    def velocity_empirical(self, x, cloud: ParticleCloud, spec, kernel) -> np.ndarray:
        """(1/N) sum_j grad phi(x - X_j) 1_{K(w(x))}(X_j - x) for one point (d,) or many (Q, d)"""
        positions = self._cloud_positions(cloud)
        single, queries = self._as_queries(x, positions.shape[1])
        n = positions.shape[0]
        out = np.empty_like(queries)
        for start in range(0, queries.shape[0], self.chunk):
            block = queries[start:start + self.chunk]
            out[start:start + self.chunk] = self._masked_sum(block, positions, spec, kernel) / n
        return out[0] if single else out

    def build_index(self, cloud: ParticleCloud, spec, bin_width: float) -> BinnedIndex:
        """Bucket a cloud snapshot; shared read-only by every query on that snapshot"""
        if not bin_width >= spec.support_radius:
            raise ConfigurationError(
                f"bin_width={bin_width} is smaller than the sensitivity radius {spec.support_radius}")
        positions = self._cloud_positions(cloud)
        origin = positions.min(axis=0)
        keys = np.floor((positions - origin) / bin_width).astype(int)
        buckets: Dict[Tuple[int, ...], list] = {}
        for index in range(positions.shape[0]):
            buckets.setdefault(tuple(keys[index]), []).append(index)
        return BinnedIndex(
            bin_width=bin_width,
            origin=origin,
            buckets={key: np.asarray(members, dtype=int) for key, members in buckets.items()},
            positions=positions,
        )

    def velocity_empirical_binned(self, x, cloud: ParticleCloud, spec, kernel, bin_width: float,
                                  index: Optional[BinnedIndex] = None) -> np.ndarray:
        """Same value as velocity_empirical, summing only over neighbouring bins"""
        if index is None:
            index = self.build_index(cloud, spec, bin_width)
        elif not index.bin_width >= spec.support_radius:
            raise ConfigurationError("binned index is narrower than the sensitivity radius")
        positions = index.positions
        single, queries = self._as_queries(x, positions.shape[1])
        n = positions.shape[0]
        out = np.empty_like(queries)
        for q, point in enumerate(queries):
            members = index.candidates(point)
            out[q] = self._masked_sum(point[None, :], positions[members], spec, kernel)[0] / n
        return out[0] if single else out

    def _cloud_positions(self, cloud) -> np.ndarray:
        positions = cloud.positions if isinstance(cloud, ParticleCloud) else np.asarray(cloud, dtype=float)
        if positions.ndim != 2 or positions.shape[0] == 0:
            raise InvalidInputError("velocity needs a nonempty (N, d) cloud")
        return positions

    def _as_queries(self, x, dimension):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        queries = x[None, :] if single else x
        if queries.shape[-1] != dimension:
            raise InvalidInputError(f"query dimension {queries.shape[-1]} does not match cloud dimension {dimension}")
        return single, queries

    # ------------------------------------------------------------------
    # Grid densities
    # ------------------------------------------------------------------

    def _weight(self, spec, w, offsets, mollification: Optional[MollificationParams]):
        if mollification is None:
            return sensitivity_service.indicator(spec, w, offsets).astype(float)
        return sensitivity_service.mollified_indicator(spec, mollification, w, offsets)

    def velocity_from_density(self, x, density: GridDensity, spec, kernel,
                              mollification: Optional[MollificationParams] = None) -> np.ndarray:
        """Midpoint rule: sum_c grad phi(x - y_c) 1_K(y_c - x) rho_c vol_c"""
        single, queries = self._as_queries(x, density.dimension)
        centers = density.centers
        masses = density.cell_masses
        occupied = masses > 0
        centers = centers[occupied]
        masses = masses[occupied]
        out = np.zeros_like(queries)
        if centers.shape[0] == 0:
            return out[0] if single else out

        chunk = self.chunk if mollification is None else 1
        for start in range(0, queries.shape[0], chunk):
            block = queries[start:start + chunk]
            w = spec.orientation_at(block)
            offsets = centers[None, :, :] - block[:, None, :]
            weight = self._weight(spec, np.broadcast_to(w[:, None, :], offsets.shape), offsets, mollification)
            out[start:start + chunk] = np.einsum('qc,qcd->qd', weight * masses, kernel.gradient(-offsets))
        return out[0] if single else out

    def grid_stencil(self, density: GridDensity, spec, kernel,
                     mollification: Optional[MollificationParams] = None) -> np.ndarray:
        """
        G(k h) = grad phi(k h) * 1_K(-k h) on every lattice offset k in (-(n-1) .. n-1)^d.
        Only valid for translation-invariant sensitivity.
        """
        if not spec.translation_invariant:
            raise InvalidInputError("grid stencil requires a translation-invariant sensitivity")
        ranges = [np.arange(-(n - 1), n) * h for n, h in zip(density.cells, density.spacing)]
        grids = np.meshgrid(*ranges, indexing='ij')
        z = np.stack([g.ravel() for g in grids], axis=-1)
        w = spec.orientation_at(np.zeros_like(z))
        weight = np.empty(z.shape[0])
        step = self.chunk * (64 if mollification is None else 1)
        for start in range(0, z.shape[0], step):
            weight[start:start + step] = self._weight(spec, w[start:start + step], -z[start:start + step],
                                                      mollification)
        stencil = kernel.gradient(z) * weight[:, None]
        return stencil.reshape(tuple(2 * n - 1 for n in density.cells) + (density.dimension,))

    def velocity_on_grid(self, density: GridDensity, spec, kernel,
                         mollification: Optional[MollificationParams] = None,
                         stencil: Optional[np.ndarray] = None) -> np.ndarray:
        """Velocity at every cell centre, shape cells + (d,)"""
        if stencil is None and spec.translation_invariant:
            stencil = self.grid_stencil(density, spec, kernel, mollification)
        if stencil is not None:
            masses = density.values * density.cell_volume
            window = tuple(slice(n - 1, 2 * n - 1) for n in density.cells)
            components = [fftconvolve(masses, stencil[..., k], mode='full')[window]
                          for k in range(density.dimension)]
            return np.stack(components, axis=-1)

        logger.debug("Direct velocity sum over %d cells", density.centers.shape[0])
        flat = self.velocity_from_density(density.centers, density, spec, kernel, mollification)
        return flat.reshape(density.cells + (density.dimension,))


# Global instance for use across the application
velocity_service = VelocityService()
