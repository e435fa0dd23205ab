import os
from dataclasses import replace

import click

from ngosim.services.experiment import parse_config, run_experiment
from ngosim.utils import exit_codes


@click.command('run')
@click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
              help='Experiment config file.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Output directory (default: NGO_SIM_OUT).')
@click.option('--seed', type=int, default=None, help='Override the config seed.')
@click.pass_obj
@exit_codes
def cmd(config, config_path, out_dir, seed):
    """Run one experiment and write trace.csv, summary.csv and bound.csv."""
    cfg, _ = parse_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out_dir = out_dir or config.OUTPUT_DIR
    row = run_experiment(cfg, out_dir)
    click.echo(f'{cfg.algorithm}: final_gap_avg={row.final_gap_avg} first_hit={row.first_hit} '
               f'bound_total={row.bound_total} -> {os.path.join(out_dir, "summary.csv")}')
