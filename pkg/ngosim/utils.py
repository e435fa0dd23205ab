import csv
import logging
import os
from functools import wraps

import click
import numpy as np

from ngosim.errors import ConfigError, NgoSimError

logger = logging.getLogger(__name__)

# stream tags keep the counter-based generators of different consumers apart
TAG_DATA = 1
TAG_INIT = 2
TAG_SAMPLE = 3
TAG_EDGES = 4
TAG_COMPRESS = 5
TAG_PARTITION = 6
TAG_PILOT = 7


def rng_stream(seed, *keys):
    """Counter-based generator keyed by (seed, *keys); the same key always gives the same draws."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def exit_codes(f):
    """Map ngosim failures of a click command onto its exit codes (2 config, 3 runtime)."""
    @wraps(f)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return f(*args, **kwargs)
        except ConfigError as exc:
            logger.error('config error: %s', exc)
            click.echo(f'config error: {exc}', err=True)
            ctx.exit(2)
        except (NgoSimError, ValueError, ArithmeticError, OSError) as exc:
            logger.exception('run failed')
            click.echo(f'error: {exc}', err=True)
            ctx.exit(3)
    return wrapper


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    logger.debug('wrote %s', path)
