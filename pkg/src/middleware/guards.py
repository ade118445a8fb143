import logging
import sys
from functools import wraps

import click
from pydantic import ValidationError

from src.exceptions import AcceptanceError, ConfigurationError, SimulationError

logger = logging.getLogger(__name__)

EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ACCEPTANCE = 3


def handle_errors(f):
    """Decorator mapping toolkit errors of a command to its exit code"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ConfigurationError, ValidationError) as e:
            click.echo(f"⚠️  Configuration error: {str(e)}", err=True)
            sys.exit(EXIT_CONFIG)
        except AcceptanceError as e:
            click.echo(f"⚠️  Acceptance check failed: {str(e)}", err=True)
            for failure in e.failures:
                click.echo(f"   - {failure}", err=True)
            sys.exit(EXIT_ACCEPTANCE)
        except click.exceptions.Exit:
            raise
        except SimulationError as e:
            logger.error(f"{f.__name__} failed: {str(e)}")
            click.echo(f"⚠️  {type(e).__name__}: {str(e)}", err=True)
            sys.exit(EXIT_FAILURE)
        except Exception as e:
            logger.exception(f"{f.__name__} crashed")
            click.echo(f"⚠️  Unexpected error: {str(e)}", err=True)
            sys.exit(EXIT_FAILURE)

    return decorated_function


def require_experiment(kind):
    """Decorator requiring the run document (first argument) to carry an experiment of this kind"""
    def decorator(f):
        @wraps(f)
        def decorated_function(document, *args, **kwargs):
            experiment = document.experiment
            if experiment is None:
                raise ConfigurationError(f"config has no `experiment` section (expected kind '{kind}')")
            if experiment.kind != kind:
                raise ConfigurationError(f"config experiment is '{experiment.kind}', this command runs '{kind}'")
            return f(document, *args, **kwargs)
        return decorated_function
    return decorator


def enforce_checks(checks, enabled: bool):
    """Raise AcceptanceError naming every failed check when --check is on"""
    failures = [name for name, ok in checks.items() if not ok]
    if enabled and failures:
        raise AcceptanceError(f"{len(failures)} of {len(checks)} checks failed", failures=failures)
    for name, ok in checks.items():
        click.echo(f"{'✅' if ok else '⚠️ '} {name}")
    return not failures
