import numpy as np
import pytest
from click.testing import CliRunner

from ngosim import create_cli
from ngosim.services.graph import build_topology, metropolis_weights


def ring_weights(n):
    return metropolis_weights(build_topology('ring', n))


def centered_normal(seed, n, d=1):
    x = np.random.default_rng(seed).standard_normal((n, d))
    return x - x.mean(axis=0)


@pytest.fixture
def ring4():
    return build_topology('ring', 4)


@pytest.fixture
def ring10_w():
    return ring_weights(10)


@pytest.fixture
def cli():
    return create_cli()


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def write_config(tmp_path):
    def _write(text, name='experiment.ini'):
        path = tmp_path / name
        path.write_text(text)
        return str(path)
    return _write
