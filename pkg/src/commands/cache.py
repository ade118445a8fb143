"""
Cache management commands
Inspect or clear the density trajectory cache
"""

import json
from datetime import datetime, timezone

import click

from src.services.cache_service import cache_service


@click.group('cache')
def cache():
    """Density trajectory cache"""


@cache.command('stats')
def stats():
    """Print cache backend statistics"""
    payload = {
        'cache_system': cache_service.get_cache_stats(),
        'timestamp': datetime.now(timezone.utc).isoformat(),
    }
    click.echo(json.dumps(payload, indent=2))


@cache.command('clear')
def clear():
    """Drop every cached trajectory"""
    removed = cache_service.clear()
    click.echo(f"✅ Cleared {removed} cache entries")
