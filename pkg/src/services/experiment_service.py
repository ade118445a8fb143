"""
Experiment Service
Monte Carlo experiments behind the rate tables: law-of-large-numbers sweeps for the
velocity and enlargement-set discrepancies, coupled stability runs, the propagation-of-chaos
table, the weak-strong Lipschitz sweep and the sensitivity assumption checks
"""

import logging
import math
import time as clock
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from src.config import Config
from src.exceptions import ConfigurationError, InvalidInputError
from src.models.experiments import (
    AssumptionsExperiment,
    ChaosExperiment,
    LlnThetaExperiment,
    LlnVelocityExperiment,
    RunDocument,
    StabilityExperiment,
    WeakStrongExperiment,
)
from src.models.particles import ParticleCloud, SCHEDULE_TOL
from src.models.pde import GridDensity
from src.models.results import (
    MIN_FIT_ROWS,
    RateRow,
    RateTable,
    TheoreticalRate,
    theta_lln_constant,
    velocity_lln_constant,
)
from src.models.sensitivity import FixedConeSensitivity, VaryingConeSensitivity
from src.services.geometry_service import geometry_service
from src.services.particle_service import (
    INIT_TAG,
    SAMPLING_TAG,
    NoiseStream,
    derive_seeds,
    particle_service,
    stream_generator,
)
from src.services.pde_service import pde_service
from src.services.sensitivity_service import sensitivity_service
from src.services.transport_service import transport_service
from src.services.velocity_service import velocity_service

logger = logging.getLogger(__name__)

U_GRID_POINTS = 64


def theoretical_bound(rate: TheoreticalRate, n: int) -> float:
    """N-dependence of the chaos bound: c_m N^(-1/2 + 1/(2m)) plus the empirical-measure branch"""
    if n < rate.min_particles:
        raise InvalidInputError(f"N={n} violates N >= (2m)^2 = {rate.min_particles}")
    moment_term = n ** rate.moment_exponent
    if rate.branch == 'high':
        sampling = n ** (-1.0 / (2 * rate.p))
    elif rate.branch == 'critical':
        sampling = n ** (-1.0 / (2 * rate.p)) * math.log(1.0 + n) ** (1.0 / rate.p)
    else:
        sampling = n ** (-1.0 / rate.d)
    return rate.c_m * n ** rate.universal_exponent + sampling + moment_term


def fit_loglog_slope(rows: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """OLS slope of log(mean) on log(N) with its 95% confidence half-width"""
    if len(rows) < MIN_FIT_ROWS:
        raise InvalidInputError(f"slope fit needs at least {MIN_FIT_ROWS} rows, got {len(rows)}")
    n_values = np.asarray([row[0] for row in rows], dtype=float)
    means = np.asarray([row[1] for row in rows], dtype=float)
    if np.any(means <= 0) or np.any(n_values <= 0):
        raise InvalidInputError("slope fit needs positive N and positive means")
    fit = stats.linregress(np.log(n_values), np.log(means))
    half_width = stats.t.ppf(0.975, len(rows) - 2) * fit.stderr
    return float(fit.slope), float(half_width)


def moment_root(samples: Sequence[float], m: int) -> Tuple[float, float]:
    """(mean S^(2m))^(1/(2m)) with a delta-method standard error"""
    powered = np.asarray(samples, dtype=float) ** (2 * m)
    moment = powered.mean()
    if moment == 0.0:
        return 0.0, 0.0
    moment_se = powered.std(ddof=1) / math.sqrt(powered.shape[0]) if powered.shape[0] > 1 else 0.0
    root = moment ** (1.0 / (2 * m))
    return float(root), float(root * moment_se / (2 * m * moment))


def u_grid(diameter: float, points: int = U_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, diameter, points)


class ExperimentService:
    """Orchestration of the replicated experiments"""

    def __init__(self, workers: int = Config.WORKERS):
        self.workers = workers

    def _map(self, fn: Callable, items: Sequence, workers: Optional[int] = None) -> List:
        """Apply fn over items in order; results never depend on the worker count"""
        workers = workers or self.workers
        if workers <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))

    def _row_seeds(self, seed: int, n_values: Sequence[int], replicas: int) -> List[List[int]]:
        return [derive_seeds(row_seed, replicas) for row_seed in derive_seeds(seed, len(n_values))]

    def _finish_table(self, table: RateTable) -> RateTable:
        positive = [(row.n, row.mean) for row in table.rows if row.mean > 0]
        if len(positive) == len(table.rows) and len(positive) >= MIN_FIT_ROWS:
            table.slope, table.slope_half_width = fit_loglog_slope(positive)
        else:
            logger.warning(f"{table.label}: slope not fitted ({len(positive)} positive rows of {len(table.rows)})")
        return table

    # ------------------------------------------------------------------
    # Law of large numbers
    # ------------------------------------------------------------------

    def _atoms(self, density: GridDensity, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """n i.i.d. cell centres drawn with the cell masses as probabilities"""
        masses = density.cell_masses
        cells = rng.choice(masses.shape[0], size=n, p=masses / masses.sum())
        return density.centers[cells], cells

    def velocity_discrepancy(self, points, cells, density: GridDensity, grid_velocity: np.ndarray,
                             spec, kernel) -> float:
        """sup_i |V[rho^N](Y_i) - V[rho](Y_i)| for atoms Y_i sitting on cell centres"""
        empirical = velocity_service.velocity_empirical(points, points, spec, kernel)
        exact = grid_velocity.reshape(-1, density.dimension)[cells]
        return float(np.max(np.linalg.norm(empirical - exact, axis=1)))

    def theta_discrepancy(self, points, density: GridDensity, spec, radii: np.ndarray) -> float:
        """
        sup_i sup_u |(rho^N - rho)(Y_i + Theta(w(Y_i))^{u,+})| with sup_u on the radius grid.
        Both measures are read off sorted distance profiles.
        """
        centers = density.centers
        masses = density.cell_masses / density.mass
        n = points.shape[0]
        worst = 0.0
        w_all = spec.orientation_at(points)
        for i in range(n):
            w = np.broadcast_to(w_all[i], points.shape)
            emp = np.sort(sensitivity_service.theta_distance(spec, w, points - points[i]))
            emp_fraction = np.searchsorted(emp, radii, side='right') / n

            wc = np.broadcast_to(w_all[i], centers.shape)
            dist = sensitivity_service.theta_distance(spec, wc, centers - points[i])
            order = np.argsort(dist, kind='stable')
            cumulative = np.concatenate([[0.0], np.cumsum(masses[order])])
            exact_fraction = cumulative[np.searchsorted(dist[order], radii, side='right')]
            worst = max(worst, float(np.max(np.abs(emp_fraction - exact_fraction))))
        return worst

    def run_lln_velocity(self, document: RunDocument, seed: int, workers: Optional[int] = None) -> RateTable:
        experiment = document.experiment
        if not isinstance(experiment, LlnVelocityExperiment):
            raise ConfigurationError("run_lln_velocity needs an lln_velocity experiment")
        pde = document.pde_config()
        density = pde_service.initial_density(pde)
        spec, kernel = document.sensitivity, document.kernel
        grid_velocity = velocity_service.velocity_on_grid(density, spec, kernel)
        m = experiment.m

        rows = []
        for n, seeds in zip(experiment.n_values, self._row_seeds(seed, experiment.n_values, experiment.replicas)):
            started = clock.perf_counter()

            def replica(replica_seed, n=n):
                points, cells = self._atoms(density, n, stream_generator(replica_seed, SAMPLING_TAG))
                return self.velocity_discrepancy(points, cells, density, grid_velocity, spec, kernel)

            values = self._map(replica, seeds, workers)
            mean, se = moment_root(values, m)
            bound = kernel.sup_norm * velocity_lln_constant(m) * n ** (-0.5 + 1.0 / (2 * m))
            rows.append(RateRow(n=n, replicas=len(values), mean=mean, std_error=se, theory_bound=bound))
            logger.info(f"lln-velocity N={n}: {mean:.4e} +/- {se:.1e} (bound {bound:.4e}) "
                        f"in {clock.perf_counter() - started:.1f}s")

        table = RateTable(rows=rows, theory_exponent=-0.5 + 1.0 / (2 * m),
                          theory_constant=kernel.sup_norm * velocity_lln_constant(m), label='lln_velocity')
        return self._finish_table(table)

    def run_lln_theta(self, document: RunDocument, seed: int, workers: Optional[int] = None) -> RateTable:
        experiment = document.experiment
        if not isinstance(experiment, LlnThetaExperiment):
            raise ConfigurationError("run_lln_theta needs an lln_theta experiment")
        pde = document.pde_config()
        density = pde_service.initial_density(pde)
        spec = document.sensitivity
        radii = u_grid(document.domain.diameter(), experiment.u_points)
        m = experiment.m

        rows = []
        for n, seeds in zip(experiment.n_values, self._row_seeds(seed, experiment.n_values, experiment.replicas)):
            def replica(replica_seed, n=n):
                points, _ = self._atoms(density, n, stream_generator(replica_seed, SAMPLING_TAG))
                return self.theta_discrepancy(points, density, spec, radii)

            values = self._map(replica, seeds, workers)
            mean, se = moment_root(values, m)
            bound = theta_lln_constant(m) * n ** (-0.5 + 1.0 / (2 * m))
            rows.append(RateRow(n=n, replicas=len(values), mean=mean, std_error=se, theory_bound=bound))
            logger.info(f"lln-theta N={n}: {mean:.4e} +/- {se:.1e}")

        table = RateTable(rows=rows, theory_exponent=-0.5 + 1.0 / (2 * m),
                          theory_constant=theta_lln_constant(m), label='lln_theta')
        return self._finish_table(table)

    def estimate_h_n(self, points, density: GridDensity, spec, kernel, radii: Optional[np.ndarray] = None) -> float:
        """
        Observable surrogate of the coupling error term:
        |grad phi|_inf * (enlargement-set discrepancy) + velocity discrepancy, both at the given points
        """
        points = np.asarray(getattr(points, 'positions', points), dtype=float)
        if radii is None:
            radii = u_grid(density.domain.diameter())
        empirical = velocity_service.velocity_empirical(points, points, spec, kernel)
        exact = velocity_service.velocity_from_density(points, density, spec, kernel)
        velocity_gap = float(np.max(np.linalg.norm(empirical - exact, axis=1)))
        theta_gap = self.theta_discrepancy(points, density, spec, radii)
        return kernel.sup_norm * theta_gap + velocity_gap

    # ------------------------------------------------------------------
    # Stability of the McKean system
    # ------------------------------------------------------------------

    def run_stability(self, document: RunDocument, seed: int) -> Dict:
        experiment = document.experiment
        if not isinstance(experiment, StabilityExperiment):
            raise ConfigurationError("run_stability needs a stability experiment")
        config = document.sim_config(seed=seed)
        pde_config = document.pde_config()
        self._check_matching_noise(config, pde_config)
        provider = pde_service.solve(pde_config)
        if provider.horizon < config.T * (1 - SCHEDULE_TOL):
            raise ConfigurationError("PDE horizon is shorter than the particle horizon")

        base = particle_service.init_cloud(config, stream_generator(seed, INIT_TAG))
        directions = stream_generator(seed, SAMPLING_TAG).standard_normal(base.positions.shape)
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)

        curves = {}
        for delta in experiment.deltas:
            shifted = geometry_service.project(base.positions + delta * directions, config.domain)
            curves[delta] = self.coupled_mckean_distance(
                base, ParticleCloud.from_positions(shifted), config, provider)
            logger.info(f"stability delta={delta}: D(0)={curves[delta]['distance'][0]:.3e}, "
                        f"D(T)={curves[delta]['distance'][-1]:.3e}")
        return self.summarise_stability(curves, experiment.max_spread,
                                         contraction_expected=document.kernel.is_zero and config.sigma == 0)

    def _check_matching_noise(self, config, pde_config):
        if not math.isclose(config.sigma, pde_config.sigma):
            raise ConfigurationError(
                f"particle sigma={config.sigma} and PDE sigma={pde_config.sigma} describe different equations")

    def coupled_mckean_distance(self, first: ParticleCloud, second: ParticleCloud, config, provider) -> Dict:
        """D(t) = max_i |Y1_i(t) - Y2_i(t)| for two McKean systems on shared noise"""
        if first.size != second.size:
            raise InvalidInputError("stability clouds must have the same size")
        noise = NoiseStream(config.seed, config.dimension)
        times = [0.0]
        distance = [float(np.max(np.linalg.norm(first.positions - second.positions, axis=1)))]
        for _ in range(config.n_steps):
            first = particle_service.step_mckean(first, provider, config, noise)
            second = particle_service.step_mckean(second, provider, config, noise)
            times.append(first.time)
            distance.append(float(np.max(np.linalg.norm(first.positions - second.positions, axis=1))))
        return {'times': times, 'distance': distance}

    def summarise_stability(self, curves: Dict[float, Dict], max_spread: float,
                            contraction_expected: bool = False) -> Dict:
        """Growth rate per delta and the relative spread of the D(t)/D(0) curves"""
        rates = {}
        ratios = {}
        for delta, curve in curves.items():
            times = np.asarray(curve['times'])
            distance = np.asarray(curve['distance'])
            if distance[0] == 0.0:
                rates[delta] = 0.0
                continue
            ratio = distance / distance[0]
            ratios[delta] = ratio
            later = times > 0
            with np.errstate(divide='ignore'):
                logs = np.log(np.maximum(ratio[later], np.finfo(float).tiny)) / times[later]
            rates[delta] = float(logs.max()) if logs.size else 0.0

        spread = 0.0
        if len(ratios) >= 2:
            stacked = np.vstack(list(ratios.values()))
            spread = float(np.max((stacked.max(axis=0) - stacked.min(axis=0)) / stacked.mean(axis=0)))

        checks = {'collapse': spread <= max_spread}
        if contraction_expected:
            checks['nonexpansive'] = all(
                max(curve['distance']) <= curve['distance'][0] * (1 + 1e-12) + 1e-15 for curve in curves.values())
        return {
            'growth_rates': {str(k): v for k, v in rates.items()},
            'relative_spread': spread,
            'max_spread': max_spread,
            'curves': {str(k): v for k, v in curves.items()},
            'checks': checks,
        }

    # ------------------------------------------------------------------
    # Propagation of chaos
    # ------------------------------------------------------------------

    def run_chaos(self, document: RunDocument, seed: int, workers: Optional[int] = None) -> RateTable:
        experiment = document.experiment
        if not isinstance(experiment, ChaosExperiment):
            raise ConfigurationError("run_chaos needs a chaos experiment")
        pde_config = document.pde_config()
        base = document.sim_config(seed=seed)
        self._check_matching_noise(base, pde_config)
        schedule = base.snapshots or pde_config.snapshots
        if not schedule:
            raise ConfigurationError("chaos needs a snapshot schedule")
        for t in schedule:
            if not any(math.isclose(t, s, rel_tol=SCHEDULE_TOL, abs_tol=SCHEDULE_TOL) for s in pde_config.snapshots):
                raise ConfigurationError(f"particle snapshot t={t} has no matching PDE snapshot")
        provider = pde_service.solve(pde_config)
        initial = provider(0.0)
        rate = TheoreticalRate(p=experiment.p, q=experiment.q, d=document.domain.dimension, m=experiment.m)

        rows = []
        for n, seeds in zip(experiment.n_values, self._row_seeds(seed, experiment.n_values, experiment.replicas)):
            config = base.with_updates(n_particles=n, snapshots=list(schedule))
            started = clock.perf_counter()

            def replica(replica_seed, config=config):
                return self.chaos_replica(config.with_updates(seed=replica_seed), initial, provider,
                                          experiment.p, experiment.density_samples)

            values = np.asarray(self._map(replica, seeds, workers))
            se = float(values.std(ddof=1) / math.sqrt(values.shape[0])) if values.shape[0] > 1 else 0.0
            rows.append(RateRow(n=n, replicas=values.shape[0], mean=float(values.mean()), std_error=se,
                                theory_bound=theoretical_bound(rate, n)))
            logger.info(f"chaos N={n}: {values.mean():.4e} +/- {se:.1e} in {clock.perf_counter() - started:.1f}s")

        table = RateTable(rows=rows, theory_exponent=rate.slowest_exponent, theory_constant=rate.c_m,
                          label='chaos', extra={'rate': rate.to_dict()})
        return self._finish_table(table)

    def chaos_replica(self, config, initial: GridDensity, provider, p: float, density_samples: int = 1) -> float:
        """sup over snapshots of W_p(mu^N_t, rho_t) for one interacting run started from rho_0"""
        rng = stream_generator(config.seed, SAMPLING_TAG)
        cloud = ParticleCloud.from_positions(
            transport_service.sample_density(initial, config.n_particles, stream_generator(config.seed, INIT_TAG)))
        result = particle_service.simulate(config, cloud=cloud)
        worst = 0.0
        for snapshot in result.snapshots:
            mean, _ = transport_service.estimate_wp_cloud_vs_density(
                snapshot, provider(snapshot.time), p, density_samples, rng)
            worst = max(worst, mean)
        return worst

    # ------------------------------------------------------------------
    # Weak-strong Lipschitz sweep
    # ------------------------------------------------------------------

    def run_weak_strong(self, document: RunDocument, seed: int, workers: Optional[int] = None) -> Dict:
        """
        Ratio sup_i |V[rho^N](Y_i) - V[rho'^N](Y'_i)| / max_i |Y_i - Y'_i| for perturbed clouds,
        across shrinking perturbation sizes.
        """
        experiment = document.experiment
        if not isinstance(experiment, WeakStrongExperiment):
            raise ConfigurationError("run_weak_strong needs a weak_strong experiment")
        density = pde_service.initial_density(document.pde_config())
        spec, kernel, domain = document.sensitivity, document.kernel, document.domain
        seeds = derive_seeds(seed, experiment.replicas)

        estimates, errors = [], []
        for delta in experiment.deltas:
            def replica(replica_seed, delta=delta):
                rng = stream_generator(replica_seed, SAMPLING_TAG)
                points = transport_service.sample_density(density, experiment.n_particles, rng)
                shift = rng.standard_normal(points.shape)
                shift *= delta / np.linalg.norm(shift, axis=1, keepdims=True)
                moved = geometry_service.project(points + shift, domain)
                gap = np.max(np.linalg.norm(points - moved, axis=1))
                if gap == 0.0:
                    return 0.0
                before = velocity_service.velocity_empirical(points, points, spec, kernel)
                after = velocity_service.velocity_empirical(moved, moved, spec, kernel)
                return float(np.max(np.linalg.norm(before - after, axis=1)) / gap)

            values = np.asarray(self._map(replica, seeds, workers))
            estimates.append(float(values.mean()) * delta)
            errors.append(float(values.std(ddof=1) / math.sqrt(values.shape[0])) * delta)
            logger.info(f"weak-strong delta={delta}: ratio {values.mean():.4e}")

        fit = sensitivity_service.fit_linear_constant(experiment.deltas, estimates, errors)
        proxy = density.mass + density.sup
        return {
            'deltas': list(experiment.deltas),
            'ratios': fit['ratios'],
            'ratio_std_errors': fit['ratio_std_errors'],
            'constant': fit['constant'],
            'density_norm_proxy': proxy,
            'constant_per_norm': fit['constant'] / proxy,
            'violations': fit['violations'],
            'checks': {'no_upward_trend': not fit['violations']},
        }

    # ------------------------------------------------------------------
    # Sensitivity assumptions
    # ------------------------------------------------------------------

    def _orientation_sampler(self, spec, rng: np.random.Generator) -> Callable[[int], np.ndarray]:
        """Orientation values spanning the interesting range of each family"""
        d = spec.dimension
        if isinstance(spec, VaryingConeSensitivity):
            low, high = 0.6, 2.0
        elif isinstance(spec, FixedConeSensitivity):
            low, high = 0.5, 2.0
        else:
            low, high = 0.0, 2.0

        def sample(count: int) -> np.ndarray:
            directions = rng.standard_normal((count, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            return directions * rng.uniform(low, high, size=(count, 1))

        return sample

    def check_variant(self, spec, experiment: AssumptionsExperiment, rng: np.random.Generator) -> Dict:
        """Compactness, enlargement, symmetric-difference, containment and mollification sweeps for one family"""
        sample_w = self._orientation_sampler(spec, rng)
        d = spec.dimension
        r = spec.support_radius

        # Compactness: nothing beyond the support radius is ever inside
        probes = rng.standard_normal((experiment.probes, d))
        probes /= np.linalg.norm(probes, axis=1, keepdims=True)
        probes *= rng.uniform(r * (1 + 1e-9), 3 * r, size=(experiment.probes, 1))
        compact = not bool(np.any(sensitivity_service.indicator(spec, sample_w(experiment.probes), probes)))

        # Enlargement measure at a fixed orientation
        w_fixed = np.zeros(d)
        w_fixed[0] = 0.75 if isinstance(spec, VaryingConeSensitivity) else 1.0
        enlarge = [sensitivity_service.enlargement_measure(spec, w_fixed, u, experiment.mc_samples, rng)
                   for u in experiment.scales]
        enlargement = sensitivity_service.fit_linear_constant(
            experiment.scales, [e for e, _ in enlarge], [s for _, s in enlarge])

        # Symmetric difference and containment against |w1 - w2|
        sym_means, sym_errors, contain_means, contain_errors = [], [], [], []
        for scale in experiment.scales:
            sym, sym_se, contain = [], [], []
            for w1 in sample_w(experiment.pairs_per_scale):
                step = rng.standard_normal(d)
                w2 = w1 + scale * step / np.linalg.norm(step)
                if spec.is_cone and np.linalg.norm(w2) == 0.0:
                    continue
                estimate, se = sensitivity_service.symmetric_difference_measure(
                    spec, w1, w2, experiment.mc_samples, rng)
                sym.append(estimate)
                sym_se.append(se)
                contain.append(sensitivity_service.theta_containment_radius(
                    spec, w1, w2, experiment.containment_samples, rng))
            sym_means.append(float(np.mean(sym)))
            sym_errors.append(float(math.sqrt(np.sum(np.square(sym_se))) / len(sym_se)))
            contain_means.append(float(np.mean(contain)))
            contain_errors.append(float(np.std(contain, ddof=1) / math.sqrt(len(contain))) if len(contain) > 1 else 0.0)
        symmetric = sensitivity_service.fit_linear_constant(experiment.scales, sym_means, sym_errors)
        containment = sensitivity_service.fit_linear_constant(experiment.scales, contain_means, contain_errors)

        # Mollification error against the 2eps-boundary at the fixed orientation
        mollification = sensitivity_service.mollification_bound_check(
            spec, w_fixed, experiment.mollification_epsilons, experiment.mc_samples, rng)

        return {
            'kind': spec.kind,
            'compactness': compact,
            'enlargement': enlargement,
            'symmetric_difference': symmetric,
            'containment': containment,
            'mollification': mollification,
            'checks': {
                'compactness': compact,
                'enlargement': not enlargement['violations'],
                'symmetric_difference': not symmetric['violations'],
                'containment': not containment['violations'],
                'mollification': not mollification['violations'],
            },
        }

    def run_assumptions(self, document: RunDocument, seed: int) -> Dict:
        experiment = document.experiment
        if not isinstance(experiment, AssumptionsExperiment):
            raise ConfigurationError("run_assumptions needs an assumptions experiment")
        reports = []
        for variant, variant_seed in zip(experiment.variants, derive_seeds(seed, len(experiment.variants))):
            started = clock.perf_counter()
            reports.append(self.check_variant(variant, experiment, stream_generator(variant_seed, SAMPLING_TAG)))
            logger.info(f"assumptions {variant.kind}: {reports[-1]['checks']} in {clock.perf_counter() - started:.1f}s")
        checks = {f"{report['kind']}.{name}": ok for report in reports for name, ok in report['checks'].items()}
        return {'variants': reports, 'checks': checks}


# Global instance for use across the application
experiment_service = ExperimentService()
