import click

from ngosim.services.experiment import parse_config, spectra
from ngosim.services.graph import TOPOLOGY_KINDS
from ngosim.utils import exit_codes


def _fmt(value):
    if value is None:
        return 'undefined'
    if isinstance(value, float):
        return f'{value:.6g}'
    return str(value)


@click.command('spectra')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help='Read topology and protocol from an experiment config.')
@click.option('--topology', 'kind', type=click.Choice(TOPOLOGY_KINDS), default='ring')
@click.option('--n', type=int, default=4)
@click.option('--edge-prob', type=float, default=None)
@click.option('--p', type=float, default=0.6)
@click.option('--gamma', type=float, default=0.05)
@click.option('--v0', type=float, default=1.0, help='Initial synchronization index for T*.')
@click.option('--seed', type=int, default=0)
@click.option('--csv', 'as_csv', is_flag=True, help='Machine-readable output.')
@click.pass_obj
@exit_codes
def cmd(config, config_path, kind, n, edge_prob, p, gamma, v0, seed, as_csv):
    """Print n, Delta, lambda2 and lambda_n of L(W), lambda2 of L(B), T* and the delay threshold."""
    topology_file = None
    if config_path:
        cfg, _ = parse_config(config_path)
        kind, n, edge_prob, p, gamma = cfg.topology, cfg.n, cfg.edge_prob, cfg.p, cfg.gamma
        seed, topology_file = cfg.topology_seed, cfg.topology_file
    rows = spectra(kind, n, p=p, gamma=gamma, V0=v0, edge_prob=edge_prob, seed=seed,
                   topology_file=topology_file)
    if as_csv:
        click.echo('quantity,value')
        for name, value in rows:
            click.echo(f'{name},{"" if value is None else repr(value)}')
    else:
        for name, value in rows:
            click.echo(f'{name}: {_fmt(value)}')
