from dataclasses import replace

import click

from ngosim.errors import ConfigError
from ngosim.services.experiment import parse_config, run_sweep
from ngosim.utils import exit_codes


@click.command('sweep')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='Experiment config with exactly one list-valued axis.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None)
@click.option('--seed', type=int, default=None, help='Override the config seed.')
@click.pass_obj
@exit_codes
def cmd(config, config_path, out_dir, seed):
    """Run one experiment per value of the swept axis and tabulate the summaries."""
    cfg, sweep = parse_config(config_path, allow_sweep=True)
    if sweep is None:
        raise ConfigError('sweep needs one list-valued axis (p, gamma, u, H, n or topology)')
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    rows = run_sweep(cfg, sweep, out_dir or config.OUTPUT_DIR, threads=config.THREADS)
    click.echo(','.join(rows[0].HEADER))
    for row in rows:
        click.echo(','.join(str(v) for v in row.csv_row()))
