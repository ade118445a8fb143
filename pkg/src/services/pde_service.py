"""
PDE Service
Explicit conservative finite-volume solver for the aggregation-diffusion equation
    d_t rho = sigma Laplace(rho) - div(rho V[rho])   with no-flux boundary on a Box,
the time-interpolating density provider, and the Gronwall-type envelopes used to check it
"""

import logging
import math
import time as clock
from bisect import bisect_right
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from src.exceptions import DomainError, InvalidInputError, TimeCoverageError
from src.models.pde import (
    GaussianDensity,
    GridDensity,
    PdeConfig,
    ProfileDensity,
    SpikeDensity,
    UniformDensity,
)
from src.services.cache_service import density_cache
from src.services.velocity_service import velocity_service

logger = logging.getLogger(__name__)

# Uniform knots recorded by the provider in addition to the snapshot schedule
PROVIDER_KNOTS = 100
TIME_TOL = 1e-12
# Negative cell values above -ROUNDOFF * sup are floating-point noise of an admissible step
ROUNDOFF = 1e-13
# Multiplier on the coarse-grid L-inf constant before it is frozen
ENVELOPE_SAFETY = 2.0
ENVELOPE_RTOL = 1e-9


class DensityProvider:
    """Solved trajectory t -> GridDensity, linear in time between recorded knots"""

    def __init__(self, config: PdeConfig, densities: List[GridDensity], max_sup: float):
        self.config = config
        self.densities = densities
        self.times = [d.time for d in densities]
        self.max_sup = max_sup

    @property
    def horizon(self) -> float:
        return self.times[-1]

    def __call__(self, t: float) -> GridDensity:
        slack = TIME_TOL * max(1.0, self.horizon)
        if t < -slack or t > self.horizon + slack:
            raise TimeCoverageError(f"Density requested at t={t}, solved range is [0, {self.horizon}]")
        t = min(max(t, 0.0), self.horizon)
        k = bisect_right(self.times, t) - 1
        if k >= len(self.times) - 1 or abs(self.times[k] - t) <= slack:
            return self.densities[min(k, len(self.times) - 1)]
        t0, t1 = self.times[k], self.times[k + 1]
        theta = (t - t0) / (t1 - t0)
        values = (1.0 - theta) * self.densities[k].values + theta * self.densities[k + 1].values
        return self.densities[k].with_values(values, t)

    def snapshots(self) -> List[GridDensity]:
        """Densities on the configured snapshot schedule"""
        return [self(t) for t in sorted(set(self.config.snapshots))]

    def sup_series(self) -> Tuple[List[float], List[float]]:
        return list(self.times), [d.sup for d in self.densities]


class PdeService:
    """Finite-volume solver and envelope utilities"""

    # ------------------------------------------------------------------
    # Initial data
    # ------------------------------------------------------------------

    def initial_density(self, config: PdeConfig) -> GridDensity:
        template = GridDensity(domain=config.domain, values=np.zeros(config.shape))
        spec = config.initial
        volume = float(np.prod(config.domain.lengths))

        if isinstance(spec, UniformDensity):
            values = np.full(config.shape, config.mass / volume)
        elif isinstance(spec, GaussianDensity):
            mean = np.asarray(spec.mean, dtype=float)
            if mean.shape[0] != config.dimension:
                raise InvalidInputError("gaussian mean must match the domain dimension")
            r2 = np.sum((template.centers - mean) ** 2, axis=1)
            values = np.exp(-0.5 * r2 / spec.std ** 2).reshape(config.shape)
        elif isinstance(spec, SpikeDensity):
            point = np.asarray(spec.point, dtype=float)
            if not config.domain.contains(point):
                raise InvalidInputError("spike point lies outside the domain")
            values = np.zeros(config.shape)
            values[tuple(template.cell_index(point))] = 1.0
        elif isinstance(spec, ProfileDensity):
            values = np.asarray(spec.values, dtype=float)
            if values.shape != config.shape:
                raise InvalidInputError(f"profile has shape {values.shape}, expected {config.shape}")
            if np.any(values < 0):
                raise InvalidInputError("profile values must be nonnegative")
        else:
            raise InvalidInputError(f"Unsupported initial density: {type(spec).__name__}")

        if not isinstance(spec, UniformDensity):
            total = values.sum() * template.cell_volume
            if total <= 0:
                raise InvalidInputError("initial density has zero mass on the mesh")
            values = values * (config.mass / total)
        return template.with_values(values, 0.0)

    # ------------------------------------------------------------------
    # Time stepping
    # ------------------------------------------------------------------

    def stencil_for(self, density: GridDensity, config: PdeConfig) -> Optional[np.ndarray]:
        """Convolution stencil when the sensitivity allows it; reused for every step of a solve"""
        if not config.sensitivity.translation_invariant or config.kernel.is_zero:
            return None
        return velocity_service.grid_stencil(density, config.sensitivity, config.kernel, config.mollification)

    def face_fluxes(self, density: GridDensity, config: PdeConfig,
                    stencil: Optional[np.ndarray] = None) -> List[np.ndarray]:
        """
        Interior face fluxes per axis: upwinded advection with the face velocity taken
        as the average of the two adjacent cell-centre velocities, plus centred diffusion.
        """
        rho = density.values
        d = density.dimension
        if config.kernel.is_zero:
            velocity = np.zeros(rho.shape + (d,))
        else:
            velocity = velocity_service.velocity_on_grid(
                density, config.sensitivity, config.kernel, config.mollification, stencil=stencil)

        fluxes = []
        for axis in range(d):
            h = density.spacing[axis]
            lower = [slice(None)] * d
            upper = [slice(None)] * d
            lower[axis] = slice(0, -1)
            upper[axis] = slice(1, None)
            lower, upper = tuple(lower), tuple(upper)
            u = 0.5 * (velocity[lower + (axis,)] + velocity[upper + (axis,)])
            advective = np.maximum(u, 0.0) * rho[lower] + np.minimum(u, 0.0) * rho[upper]
            diffusive = config.sigma * (rho[upper] - rho[lower]) / h
            fluxes.append(advective - diffusive)
        return fluxes

    def step_fv(self, density: GridDensity, config: PdeConfig, dt: Optional[float] = None,
                stencil: Optional[np.ndarray] = None) -> GridDensity:
        """One explicit step; boundary faces carry zero flux"""
        dt = config.time_step if dt is None else dt
        config.check_cfl(dt)
        rho = density.values
        update = np.zeros_like(rho)
        for axis, flux in enumerate(self.face_fluxes(density, config, stencil)):
            pad = [(0, 0)] * rho.ndim
            pad[axis] = (1, 1)
            padded = np.pad(flux, pad)
            update -= np.diff(padded, axis=axis) / density.spacing[axis]
        values = rho + dt * update
        negative = values < 0.0
        if np.any(negative):
            if values.min() < -ROUNDOFF * max(float(rho.max()), 1.0):
                raise DomainError(f"finite-volume step produced density {values.min():.3e} < 0 at t={density.time}")
            values = np.where(negative, 0.0, values)
        return density.with_values(values, density.time + dt)

    def solve(self, config: PdeConfig, use_cache: bool = True) -> DensityProvider:
        """
        March from t = 0 to T, landing exactly on every snapshot and provider knot.
        Records max over all steps of |rho_t|_inf.
        """
        payload = config.cache_key_payload()
        if use_cache:
            cached = density_cache.get_trajectory(payload)
            if cached is not None:
                logger.info("Density trajectory served from cache")
                return self._from_record(config, cached)

        started = clock.perf_counter()
        density = self.initial_density(config)
        stencil = self.stencil_for(density, config)
        dt = config.time_step
        knots = sorted({0.0, config.T, *config.snapshots,
                        *(config.T * k / PROVIDER_KNOTS for k in range(1, PROVIDER_KNOTS))})

        recorded = [density]
        max_sup = density.sup
        steps = 0
        for target in knots[1:]:
            while target - density.time > TIME_TOL * max(1.0, config.T):
                h = min(dt, target - density.time)
                density = self.step_fv(density, config, dt=h, stencil=stencil)
                max_sup = max(max_sup, density.sup)
                steps += 1
            density = density.with_values(density.values, target)
            recorded.append(density)

        logger.info(f"PDE solved: {steps} steps on {config.shape} cells in {clock.perf_counter() - started:.2f}s, "
                    f"mass {recorded[-1].mass:.12g}, max sup {max_sup:.6g}")
        if use_cache:
            density_cache.cache_trajectory(payload, [d.time for d in recorded],
                                           [d.values.tolist() for d in recorded], max_sup)
        return DensityProvider(config, recorded, max_sup)

    def _from_record(self, config: PdeConfig, record) -> DensityProvider:
        densities = [GridDensity(domain=config.domain, values=np.asarray(values), time=t)
                     for t, values in zip(record['times'], record['values'])]
        return DensityProvider(config, densities, record['max_sup'])

    # ------------------------------------------------------------------
    # Diagnostics
    # ------------------------------------------------------------------

    def restrict(self, density: GridDensity, cells: Sequence[int]) -> GridDensity:
        """Coarsen by averaging blocks of cells (mass preserving)"""
        factors = []
        for fine, coarse in zip(density.cells, cells):
            if fine % coarse:
                raise InvalidInputError(f"cannot restrict {density.cells} onto {tuple(cells)}")
            factors.append(fine // coarse)
        shape = []
        for coarse, factor in zip(cells, factors):
            shape.extend([coarse, factor])
        blocks = density.values.reshape(shape)
        values = blocks.mean(axis=tuple(range(1, 2 * len(cells), 2)))
        return density.with_values(values, density.time)

    def l1_distance(self, a: GridDensity, b: GridDensity) -> float:
        """L1 distance, restricting the finer density to the coarser mesh"""
        if a.cells != b.cells:
            if np.prod(a.cells) > np.prod(b.cells):
                a = self.restrict(a, b.cells)
            else:
                b = self.restrict(b, a.cells)
        return float(np.abs(a.values - b.values).sum() * a.cell_volume)

    def l1_to_uniform(self, density: GridDensity) -> float:
        uniform = np.full(density.cells, density.mass / float(np.prod(density.domain.lengths)))
        return float(np.abs(density.values - uniform).sum() * density.cell_volume)

    def center_of_mass(self, density: GridDensity) -> np.ndarray:
        masses = density.cell_masses
        return masses @ density.centers / masses.sum()

    # ------------------------------------------------------------------
    # Envelopes
    # ------------------------------------------------------------------

    def linf_envelope(self, rho0_sup: float, C: float, t: float) -> float:
        """rho0_sup / (1 - C rho0_sup t), defined before the blow-up time 1/(C rho0_sup)"""
        if rho0_sup < 0 or C < 0 or t < 0:
            raise InvalidInputError("linf_envelope needs nonnegative rho0_sup, C and t")
        growth = C * rho0_sup
        if growth == 0.0:
            return rho0_sup
        blow_up = 1.0 / growth
        if t >= blow_up:
            raise DomainError(f"t={t} is past the envelope blow-up time {blow_up:.6g}", blow_up_time=blow_up)
        return rho0_sup / (1.0 - growth * t)

    def gronwall_envelope_ii(self, f0: float, C: float,
                             g: Union[Callable[[np.ndarray], np.ndarray], Tuple[Sequence[float], Sequence[float]]],
                             t: float, samples: int = 1025) -> float:
        """f0 e^t + C e^t int_0^t g(s) e^{-s} ds by the trapezoid rule"""
        if t < 0:
            raise InvalidInputError("t must be nonnegative")
        if t == 0:
            return f0
        if callable(g):
            s = np.linspace(0.0, t, samples)
            values = np.asarray(g(s), dtype=float) * np.ones_like(s)
        else:
            times, g_values = (np.asarray(v, dtype=float) for v in g)
            if times[0] > 0 or times[-1] < t:
                raise InvalidInputError("g must be sampled on all of [0, t]")
            inside = times < t
            s = np.append(times[inside], t)
            values = np.append(np.asarray(g_values)[inside], np.interp(t, times, g_values))
        integral = trapezoid(values * np.exp(-s), s)
        return math.exp(t) * (f0 + C * integral)

    def fit_linf_constant(self, times: Sequence[float], sups: Sequence[float], f0: float) -> float:
        """Smallest C with sup(t) <= f0 / (1 - C f0 t) at every sampled t > 0"""
        times = np.asarray(times, dtype=float)
        sups = np.asarray(sups, dtype=float)
        positive = times > 0
        if not np.any(positive) or f0 <= 0:
            return 0.0
        needed = (1.0 - f0 / sups[positive]) / (f0 * times[positive])
        return float(max(0.0, needed.max()))

    def envelope_check(self, config: PdeConfig, refinements: Sequence[int] = (2, 4),
                       safety: float = ENVELOPE_SAFETY, use_cache: bool = False) -> Dict:
        """
        Fit C on `config` (the coarsest grid), freeze safety * C, and check
        max |rho_t|_inf against linf_envelope on each refined grid at every
        recorded time before the blow-up time.
        """
        if safety < 1.0:
            raise InvalidInputError(f"safety factor must be at least 1, got {safety}")
        coarse = self.solve(config, use_cache=use_cache)
        times, sups = coarse.sup_series()
        fitted = self.fit_linf_constant(times, sups, sups[0])
        C = safety * fitted
        blow_up = 1.0 / (C * sups[0]) if C > 0 else math.inf
        logger.info(f"L-inf envelope: C_fit={fitted:.6g} on {config.shape} cells, frozen C={C:.6g}, "
                    f"blow-up at t={blow_up:.6g}")

        grids = []
        for factor in refinements:
            refined = PdeConfig(**{**dict(config), 'cells': config.cells * factor, 'dt': None})
            fine = self.solve(refined, use_cache=use_cache)
            f0 = fine.densities[0].sup
            worst, checked = 0.0, 0
            for density in fine.densities:
                try:
                    bound = self.linf_envelope(f0, C, density.time)
                except DomainError:
                    break
                worst = max(worst, density.sup / bound)
                checked += 1
            grids.append({'cells': config.cells * factor, 'checked_until': fine.densities[checked - 1].time,
                          'worst_ratio': worst, 'ok': worst <= 1.0 + ENVELOPE_RTOL})
            if not grids[-1]['ok']:
                logger.warning(f"⚠️  L-inf envelope exceeded on {config.cells * factor} cells: ratio {worst:.6g}")
        return {'fitted_constant': fitted, 'constant': C, 'blow_up_time': blow_up, 'grids': grids,
                'ok': all(grid['ok'] for grid in grids)}


# Global instance for use across the application
pde_service = PdeService()
