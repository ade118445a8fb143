"""
Shared command plumbing: options every subcommand accepts and run preparation
"""

import functools
import os
from dataclasses import dataclass
from typing import Optional

import click

from src.config import get_config
from src.models.experiments import RunDocument, load_document
from src.services.experiment_service import experiment_service
from src.services.report_service import RunReporter


def run_options(f):
    """--config, --seed, --out, --check, --workers"""
    @click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                  help='JSON run document')
    @click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None,
                  help='Unsigned 64-bit seed (defaults to simulation.seed or 0)')
    @click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                  help='Output directory')
    @click.option('--check', is_flag=True, help='Exit with code 3 when an acceptance check fails')
    @click.option('--workers', type=click.IntRange(1), default=None, help='Replica worker threads')
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        return f(*args, **kwargs)
    return wrapper


@dataclass
class RunContext:
    document: RunDocument
    seed: int
    reporter: RunReporter
    check: bool
    workers: int


def prepare(command: str, config_path: str, seed: Optional[int], out_dir: Optional[str],
            check: bool, workers: Optional[int]) -> RunContext:
    document = load_document(config_path)
    if seed is None:
        seed = document.simulation.seed if document.simulation is not None else 0
    settings = get_config()
    out_dir = out_dir or os.path.join(settings.OUTPUT_DIR, command)
    workers = workers or settings.WORKERS
    experiment_service.workers = workers
    return RunContext(document=document, seed=seed, reporter=RunReporter(out_dir), check=check, workers=workers)
