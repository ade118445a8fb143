"""
simulate / pde commands
Single runs of the interacting particle system and of the finite-volume solver
"""

import logging
import time

import click
import numpy as np

from src.commands.common import prepare, run_options
from src.middleware.guards import enforce_checks, handle_errors
from src.models.domain import boundary_tolerance
from src.services.particle_service import particle_service
from src.services.pde_service import pde_service

logger = logging.getLogger(__name__)


@click.command('simulate')
@run_options
@handle_errors
def simulate(config_path, seed, out_dir, check, workers):
    """Run the interacting particle system and write snapshots"""
    ctx = prepare('simulate', config_path, seed, out_dir, check, workers)
    config = ctx.document.sim_config(seed=ctx.seed)
    started = time.perf_counter()
    result = particle_service.simulate(config)

    clouds = result.snapshots
    if not clouds or clouds[-1].step != result.final.step:
        clouds = clouds + [result.final]
    ctx.reporter.write_snapshots(clouds)
    ctx.reporter.write_series('reflection.csv', {
        't': [float(c.time) for c in clouds],
        'mean_reflection_total': [float(c.ledger.total.mean()) for c in clouds],
        'max_reflection_total': [float(c.ledger.total.max()) for c in clouds],
    })
    ctx.reporter.write_manifest('simulate', config.to_dict(), ctx.seed, time.perf_counter() - started)

    tol = boundary_tolerance(config.domain)
    totals = [c.ledger.total for c in clouds]
    checks = {
        'confined': all(bool(np.all(config.domain.contains(c.positions, tol=tol))) for c in clouds),
        'ledger_monotone': all(bool(np.all(b >= a)) for a, b in zip(totals, totals[1:])),
    }
    enforce_checks(checks, ctx.check)
    click.echo(f"✅ Simulated N={config.n_particles} to t={result.final.time:.4g} -> {ctx.reporter.out_dir}")


@click.command('pde')
@click.option('--binary', is_flag=True, help='Write density snapshots as flat binary with JSON headers')
@click.option('--envelope', is_flag=True, help='Check the L-inf envelope on two refined grids')
@run_options
@handle_errors
def pde(binary, envelope, config_path, seed, out_dir, check, workers):
    """Solve the mean-field PDE and write density snapshots"""
    ctx = prepare('pde', config_path, seed, out_dir, check, workers)
    config = ctx.document.pde_config()
    started = time.perf_counter()
    provider = pde_service.solve(config, use_cache=False)

    for k, density in enumerate(provider.snapshots()):
        ctx.reporter.write_density(density, f"density_{k:03d}", binary=binary)
    densities = provider.densities
    mass0 = densities[0].mass
    ctx.reporter.write_series('pde_series.csv', {
        't': [float(d.time) for d in densities],
        'mass': [float(d.mass) for d in densities],
        'sup': [float(d.sup) for d in densities],
        'l1_to_uniform': [pde_service.l1_to_uniform(d) for d in densities],
    })
    ctx.reporter.write_manifest('pde', config.to_dict(), ctx.seed, time.perf_counter() - started,
                                extra={'max_sup': provider.max_sup, 'dt': config.time_step})

    checks = {
        'mass_conserved': all(abs(d.mass - mass0) <= 1e-12 * mass0 for d in densities),
        'nonnegative': all(float(d.values.min()) >= 0.0 for d in densities),
    }
    if envelope:
        report = pde_service.envelope_check(config)
        ctx.reporter.write_json('envelope.json', report)
        checks['linf_envelope'] = report['ok']
    enforce_checks(checks, ctx.check)
    click.echo(f"✅ PDE solved on {config.shape} cells to t={config.T} -> {ctx.reporter.out_dir}")
