import logging

import click

from config import Config


def create_cli(config_class=Config):
    """Build the ngosim command group with every subcommand registered."""
    logging.basicConfig(
        level=getattr(logging, config_class.LOG_LEVEL, logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    @click.group()
    @click.pass_context
    def cli(ctx):
        """Nonlinear gossip consensus and decentralized SGD experiments."""
        ctx.obj = config_class

    # Register commands
    from ngosim.commands import run, spectra, sweep
    cli.add_command(run.cmd)
    cli.add_command(sweep.cmd)
    cli.add_command(spectra.cmd)

    return cli
