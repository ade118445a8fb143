import logging
import os
import sys
# DON'T CHANGE THIS !!!
sys.path.insert(0, os.path.dirname(os.path.dirname(__file__)))

import click

from src.commands.cache import cache
from src.commands.experiments import assumptions, chaos, lln_theta, lln_velocity, stability, weak_strong
from src.commands.simulate import pde, simulate
from src.config import get_config


def create_cli(config_name=None):
    """Application factory pattern"""
    settings = get_config(config_name)
    logging.basicConfig(
        level=getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    @click.group('reflectchaos')
    def cli():
        """Reflected interacting particles with sensitivity regions: simulation and convergence experiments"""

    for command in (simulate, pde, chaos, lln_velocity, lln_theta, stability, weak_strong, assumptions, cache):
        cli.add_command(command)
    return cli


cli = create_cli()

if __name__ == '__main__':
    cli()
