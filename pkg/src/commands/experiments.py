"""
Experiment commands
Rate-table experiments (chaos, lln-velocity, lln-theta) and the report experiments
(stability, weak-strong, assumptions)
"""

import time

import click

from src.commands.common import prepare, run_options
from src.middleware.guards import enforce_checks, handle_errors, require_experiment
from src.services.experiment_service import experiment_service


def _write_rate_outputs(ctx, table, command, started):
    ctx.reporter.write_rate_table(table)
    ctx.reporter.write_slope(table)
    ctx.reporter.write_series('rate_series.csv', {
        'N': table.n_values,
        'mean': table.means,
        'stderr': [row.std_error for row in table.rows],
    })
    ctx.reporter.write_manifest(command, ctx.document.to_dict(), ctx.seed, time.perf_counter() - started)


def _slope_in_band(table, band):
    return table.slope is not None and band[0] <= table.slope <= band[1]


@require_experiment('lln_velocity')
def _lln_velocity(document, ctx):
    table = experiment_service.run_lln_velocity(document, ctx.seed, ctx.workers)
    return table, {'rows_within_bound': table.rows_within_bound(),
                   'slope_in_band': _slope_in_band(table, document.experiment.slope_band),
                   'extremes_decrease': table.rows[-1].mean < table.rows[0].mean}


@require_experiment('lln_theta')
def _lln_theta(document, ctx):
    table = experiment_service.run_lln_theta(document, ctx.seed, ctx.workers)
    return table, {'rows_within_bound': table.rows_within_bound(),
                   'slope_in_band': _slope_in_band(table, document.experiment.slope_band)}


@require_experiment('chaos')
def _chaos(document, ctx):
    table = experiment_service.run_chaos(document, ctx.seed, ctx.workers)
    slope_ok = (table.slope is not None and table.slope <= document.experiment.slope_max
                and table.slope + table.slope_half_width < 0)
    return table, {'strictly_decreasing': table.strictly_decreasing(), 'slope': slope_ok}


def _rate_command(name, runner):
    @click.command(name)
    @run_options
    @handle_errors
    def command(config_path, seed, out_dir, check, workers):
        ctx = prepare(name, config_path, seed, out_dir, check, workers)
        started = time.perf_counter()
        table, checks = runner(ctx.document, ctx)
        _write_rate_outputs(ctx, table, name, started)
        for row in table.rows:
            click.echo(f"N={row.n:>6}  mean={row.mean:.4e}  se={row.std_error:.1e}")
        if table.slope is not None:
            click.echo(f"slope {table.slope:.3f} +/- {table.slope_half_width:.3f} "
                       f"(theory {table.theory_exponent:.3f})")
        enforce_checks(checks, ctx.check)

    command.__doc__ = f"Run the {name} rate experiment"
    return command


lln_velocity = _rate_command('lln-velocity', _lln_velocity)
lln_theta = _rate_command('lln-theta', _lln_theta)
chaos = _rate_command('chaos', _chaos)


@require_experiment('stability')
def _stability(document, ctx):
    report = experiment_service.run_stability(document, ctx.seed)
    for delta, curve in report['curves'].items():
        ctx.reporter.write_series(f"stability_{delta}.csv", {'t': curve['times'], 'D': curve['distance']})
    return report


@require_experiment('weak_strong')
def _weak_strong(document, ctx):
    report = experiment_service.run_weak_strong(document, ctx.seed, ctx.workers)
    ctx.reporter.write_series('weak_strong.csv', {'delta': report['deltas'], 'ratio': report['ratios'],
                                                  'stderr': report['ratio_std_errors']})
    return report


@require_experiment('assumptions')
def _assumptions(document, ctx):
    return experiment_service.run_assumptions(document, ctx.seed)


def _report_command(name, runner):
    @click.command(name)
    @run_options
    @handle_errors
    def command(config_path, seed, out_dir, check, workers):
        ctx = prepare(name, config_path, seed, out_dir, check, workers)
        started = time.perf_counter()
        report = runner(ctx.document, ctx)
        ctx.reporter.write_json(f"{name}.json", report)
        ctx.reporter.write_manifest(name, ctx.document.to_dict(), ctx.seed, time.perf_counter() - started)
        enforce_checks(report['checks'], ctx.check)

    command.__doc__ = f"Run the {name} experiment"
    return command


stability = _report_command('stability', _stability)
weak_strong = _report_command('weak-strong', _weak_strong)
assumptions = _report_command('assumptions', _assumptions)
