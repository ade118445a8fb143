import csv
import json

import numpy as np

from src.models.domain import unit_box
from src.models.particles import ParticleCloud
from src.models.pde import GridDensity
from src.models.results import RateRow, RateTable
from src.services.report_service import RunReporter, read_density_binary


def _read_csv(path):
    with path.open(newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def test_snapshot_columns(tmp_path, rng):
    reporter = RunReporter(tmp_path)
    cloud = ParticleCloud.from_positions(rng.random((3, 2)))
    rows = _read_csv(reporter.write_snapshots([cloud]))
    assert list(rows[0]) == ['t', 'particle_id', 'x_1', 'x_2', 'reflection_total']
    assert [int(r['particle_id']) for r in rows] == [0, 1, 2]
    assert float(rows[1]['x_2']) == cloud.positions[1, 1]


def test_rate_table_and_slope(tmp_path):
    reporter = RunReporter(tmp_path)
    rows = [RateRow(n=n, replicas=30, mean=1.0 / n, std_error=0.01, theory_bound=2.0) for n in (16, 32, 64, 128)]
    table = RateTable(rows=rows, theory_exponent=-0.25, slope=-1.0, slope_half_width=0.0, label='chaos',
                      extra={'rate': {'branch': 'critical'}})
    written = _read_csv(reporter.write_rate_table(table))
    assert [int(r['N']) for r in written] == [16, 32, 64, 128]
    assert float(written[2]['mean']) == 1.0 / 64
    slope = json.loads(reporter.write_slope(table).read_text(encoding='utf-8'))
    assert slope['slope'] == -1.0
    assert slope['rate']['branch'] == 'critical'


def test_binary_density_is_read_back_exactly(tmp_path, rng):
    domain = unit_box(2)
    density = GridDensity(domain=domain, values=rng.random((5, 7)), time=0.25)
    path = RunReporter(tmp_path).write_density(density, 'density_000', binary=True)
    restored = read_density_binary(path, domain)
    np.testing.assert_array_equal(restored.values, density.values)
    assert restored.time == 0.25
    header = json.loads((tmp_path / 'density_000.json').read_text(encoding='utf-8'))
    assert header['dims'] == [5, 7]


def test_density_csv_and_manifest(tmp_path):
    reporter = RunReporter(tmp_path)
    density = GridDensity(domain=unit_box(2), values=np.ones((2, 2)))
    rows = _read_csv(reporter.write_density(density, 'density_000'))
    assert len(rows) == 4
    assert float(rows[0]['x_1']) == 0.25
    manifest = json.loads(reporter.write_manifest('pde', {'cells': 2}, 0, 0.1, extra={'dt': 0.01})
                          .read_text(encoding='utf-8'))
    assert manifest['command'] == 'pde'
    assert manifest['dt'] == 0.01
    assert 'numpy' in manifest['versions']
