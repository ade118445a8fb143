"""
Report Service
Writes run artifacts: rate tables, slope summaries, manifests, plot-ready series,
particle snapshots and density snapshots (CSV or flat binary with a JSON header)
"""

import csv
import json
import logging
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from src.models.particles import ParticleCloud
from src.models.pde import GridDensity
from src.models.results import RateTable

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ['reflectchaos', 'numpy', 'scipy', 'pydantic', 'click', 'redis', 'python-dotenv']


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    versions['python'] = platform.python_version()
    return versions


def _write_csv(path: Path, fieldnames: List[str], rows: Iterable[Dict[str, Any]]) -> Path:
    with path.open('w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def _write_json(path: Path, obj: Any) -> Path:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, default=_json_default) + "\n", encoding='utf-8')
    return path


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"cannot serialise {type(value).__name__}")


class RunReporter:
    """Artifacts of one command invocation, all under a single output directory"""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write_rate_table(self, table: RateTable, name: str = 'rate_table.csv') -> Path:
        rows = [{'N': row.n, 'M': row.replicas, 'mean': repr(row.mean), 'stderr': repr(row.std_error),
                 'theory_bound': '' if row.theory_bound is None else repr(row.theory_bound)}
                for row in table.rows]
        return _write_csv(self.out_dir / name, ['N', 'M', 'mean', 'stderr', 'theory_bound'], rows)

    def write_slope(self, table: RateTable, name: str = 'slope.json') -> Path:
        return _write_json(self.out_dir / name, {
            'slope': table.slope,
            'ci': table.slope_half_width,
            'theory_exponent': table.theory_exponent,
            'theory_constant': table.theory_constant,
            'label': table.label,
            **table.extra,
        })

    def write_json(self, name: str, payload: Any) -> Path:
        return _write_json(self.out_dir / name, payload)

    def write_manifest(self, command: str, config_echo: Dict, seed: Optional[int], wall_time: float,
                       extra: Optional[Dict] = None) -> Path:
        manifest = {
            'command': command,
            'seed': seed,
            'config': config_echo,
            'versions': package_versions(),
            'wall_time_seconds': wall_time,
        }
        if extra:
            manifest.update(extra)
        return _write_json(self.out_dir / 'manifest.json', manifest)

    def write_series(self, name: str, columns: Dict[str, List]) -> Path:
        """Plot-ready CSV: one column per key, rows aligned by position"""
        fieldnames = list(columns)
        length = len(next(iter(columns.values()))) if columns else 0
        rows = ({key: repr(columns[key][i]) if isinstance(columns[key][i], float) else columns[key][i]
                 for key in fieldnames} for i in range(length))
        return _write_csv(self.out_dir / name, fieldnames, rows)

    def write_snapshots(self, clouds: List[ParticleCloud], name: str = 'snapshots.csv') -> Path:
        """Columns t, particle_id, x_1..x_d, reflection_total"""
        if not clouds:
            return _write_csv(self.out_dir / name, ['t', 'particle_id', 'reflection_total'], [])
        d = clouds[0].dimension
        coords = [f"x_{k + 1}" for k in range(d)]
        fieldnames = ['t', 'particle_id', *coords, 'reflection_total']

        def rows():
            for cloud in clouds:
                for i in range(cloud.size):
                    row = {'t': repr(float(cloud.time)), 'particle_id': int(cloud.particle_ids[i]),
                           'reflection_total': repr(float(cloud.ledger.total[i]))}
                    row.update({coords[k]: repr(float(cloud.positions[i, k])) for k in range(d)})
                    yield row

        return _write_csv(self.out_dir / name, fieldnames, rows())

    def write_density(self, density: GridDensity, name: str, binary: bool = False) -> Path:
        """CSV of (cell index, centre, value) or `<name>.bin` plus `<name>.json` header"""
        if binary:
            header = {
                'dims': list(density.cells),
                'h': density.spacing.tolist(),
                't': density.time,
                'mass': density.mass,
                'dtype': 'float64',
                'order': 'C',
            }
            _write_json(self.out_dir / f"{name}.json", header)
            path = self.out_dir / f"{name}.bin"
            path.write_bytes(np.ascontiguousarray(density.values, dtype='<f8').tobytes())
            return path

        d = density.dimension
        fieldnames = [f"i_{k + 1}" for k in range(d)] + [f"x_{k + 1}" for k in range(d)] + ['value']
        indices = np.stack(np.unravel_index(np.arange(density.values.size), density.cells), axis=-1)
        flat = density.values.ravel()

        def rows():
            for index, center, value in zip(indices, density.centers, flat):
                row = {f"i_{k + 1}": int(index[k]) for k in range(d)}
                row.update({f"x_{k + 1}": repr(float(center[k])) for k in range(d)})
                row['value'] = repr(float(value))
                yield row

        return _write_csv(self.out_dir / f"{name}.csv", fieldnames, rows())


def read_density_binary(path, domain) -> GridDensity:
    """Inverse of write_density(binary=True)"""
    path = Path(path)
    header = json.loads(path.with_suffix('.json').read_text(encoding='utf-8'))
    values = np.frombuffer(path.read_bytes(), dtype='<f8').reshape(header['dims'])
    return GridDensity(domain=domain, values=values.copy(), time=header['t'])
