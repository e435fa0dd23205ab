import hashlib
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace

import numpy as np
from thefuzz import process as fuzz_process

from config import Config
from ngosim.errors import ConfigError, StabilityWarning
from ngosim.models import (ALGORITHMS, COMM_MODELS, COMPRESSOR_KINDS, OBJECTIVE_KINDS, PARTITION_SCHEMES,
                           Compressor, Delayed, ExperimentConfig, RandomGraph, SummaryRow, Switching,
                           Synchronous, WorkerPopulation, ConsensusProtocol)
from ngosim.services.consensus import (delay_threshold, finite_time_bound, first_hit,
                                       simulate_consensus, sync_index)
from ngosim.services.graph import (TOPOLOGY_KINDS, build_topology, laplacian, load_topology,
                                   metropolis_weights, nonlinear_weight_matrix, spectral_summary,
                                   stable_rate, unweighted_laplacian)
from ngosim.services.objective import (load_dataset, make_logistic, make_quadratic,
                                       objectives_from_dataset, solve_optimum)
from ngosim.services.optimize import (evaluate_bound, make_schedule, mixing_beta, run_centralized,
                                      run_compressed_ngo, run_gossip_sgd, run_local_sgd, run_ngo_sgd)
from ngosim.utils import TAG_INIT, rng_stream, write_csv

logger = logging.getLogger(__name__)

SUGGEST_THRESHOLD = 80
LIST = 'list'

# section -> key -> (ExperimentConfig field, converter or choices)
SCHEMA = {
    'run': {
        'algorithm': ('algorithm', ALGORITHMS),
        'seed': ('seed', int),
        'T': ('T', int),
        'rounds': ('rounds', int),
        'tol': ('tol', float),
        'gap_tol': ('gap_tol', float),
        'repeats': ('repeats', int),
    },
    'topology': {
        'kind': ('topology', TOPOLOGY_KINDS),
        'n': ('n', int),
        'edge_prob': ('edge_prob', float),
        'seed': ('topology_seed', int),
        'file': ('topology_file', str),
    },
    'protocol': {
        'p': ('p', float),
        'gamma': ('gamma', float),
        'comm': ('comm', COMM_MODELS),
        'tau': ('tau', int),
        'u': ('u', float),
        'seed': ('comm_seed', int),
        'mix_on': ('mix_on', ('half_step', 'pre_step')),
        'switch': ('switch', LIST),
        'period': ('period', int),
    },
    'optimizer': {
        'a': ('a', float),
        'H': ('H', int),
        'batch': ('batch', int),
        'compressor': ('compressor', COMPRESSOR_KINDS),
        'k': ('k', int),
        'sync_threshold': ('sync_threshold', float),
    },
    'objective': {
        'kind': ('objective', OBJECTIVE_KINDS),
        'd': ('d', int),
        'samples': ('samples', int),
        'heterogeneity': ('heterogeneity', float),
        'noise': ('noise', float),
        'partition': ('partition', PARTITION_SCHEMES),
        'beta': ('beta_dirichlet', float),
        'shards': ('shards', int),
        'reg': ('reg', float),
        'dataset': ('dataset', str),
        'model': ('model', ('logistic', 'quadratic')),
        'init_scale': ('init_scale', float),
    },
}

SWEEP_AXES = {
    ('protocol', 'p'): 'p',
    ('protocol', 'gamma'): 'gamma',
    ('protocol', 'u'): 'u',
    ('optimizer', 'H'): 'H',
    ('topology', 'n'): 'n',
    ('topology', 'kind'): 'topology',
}

TRACE_HEADER = ('t', 'V', 'loss_gap_mean', 'loss_gap_avg', 'comm_rounds', 'bits_sent')
CONSENSUS_HEADER = ('round', 'V', 'mean_norm')
BOUND_HEADER = ('variant', 'T', 'term_init', 'term_variance', 'term_sync', 'total', 'observed_gap')


# Config files

def _suggest(word, candidates):
    if not candidates:
        return ''
    best, score = fuzz_process.extractOne(word, list(candidates))
    if score >= SUGGEST_THRESHOLD:
        return f". Did you mean '{best}'?"
    return ''


def _all_names():
    names = set(SCHEMA)
    for keys in SCHEMA.values():
        names.update(keys)
    return names


def _convert(raw, kind, key, line):
    if raw.lower() == 'none':
        return None
    if isinstance(kind, tuple):
        if raw not in kind:
            raise ConfigError(f'{key} must be one of {", ".join(kind)}, got {raw!r}{_suggest(raw, kind)}', line)
        return raw
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f'{key}: cannot read {raw!r} as {kind.__name__}', line) from None


def parse_config_text(text, allow_sweep=False):
    """
    Parse a key = value config with [section] headers.

    Returns (ExperimentConfig, sweep) where sweep is (axis, field, values) for the
    single list-valued axis, or None.
    """
    values = {}
    sweep = None
    section = None
    seen = set()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if line.startswith('['):
            if not line.endswith(']'):
                raise ConfigError(f'malformed section header {line!r}', no)
            name = line[1:-1].strip()
            if name not in SCHEMA:
                raise ConfigError(f'unknown section [{name}]{_suggest(name, SCHEMA)}', no)
            section = name
            continue
        if '=' not in line:
            raise ConfigError(f'expected "key = value", got {line!r}', no)
        key, value = (part.strip() for part in line.split('=', 1))
        if section is None:
            raise ConfigError(f'key {key!r} appears before any [section]', no)
        spec = SCHEMA[section].get(key)
        if spec is None:
            raise ConfigError(f'unknown key {key!r} in [{section}]{_suggest(key, _all_names())}', no)
        if (section, key) in seen:
            raise ConfigError(f'duplicate key {key!r} in [{section}]', no)
        seen.add((section, key))

        field_name, kind = spec
        items = [item.strip() for item in value.split(',') if item.strip()]
        if kind == LIST:
            values[field_name] = tuple(items)
        elif len(items) > 1:
            axis = SWEEP_AXES.get((section, key))
            if not allow_sweep:
                raise ConfigError(f'list value for {key!r}; lists are only allowed with the sweep command', no)
            if axis is None:
                raise ConfigError(f'{key!r} cannot be swept; sweepable axes are '
                                  f'{", ".join(sorted(SWEEP_AXES.values()))}', no)
            if sweep is not None:
                raise ConfigError(f'only one axis may be swept, already sweeping {sweep[0]!r}', no)
            sweep = (axis, field_name, [_convert(item, kind, key, no) for item in items])
            values[field_name] = sweep[2][0]
        else:
            values[field_name] = _convert(value, kind, key, no)

    try:
        cfg = ExperimentConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, sweep


def parse_config(path, allow_sweep=False):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc.strerror}') from None
    return parse_config_text(text, allow_sweep=allow_sweep)


def format_config(cfg):
    """Effective config text; parsing it back gives the same ExperimentConfig."""
    data = asdict(cfg)
    out = []
    for section, keys in SCHEMA.items():
        out.append(f'[{section}]')
        for key, (field_name, _) in keys.items():
            value = data[field_name]
            if value is None:
                continue
            if isinstance(value, (tuple, list)):
                value = ', '.join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            out.append(f'{key} = {value}')
        out.append('')
    return '\n'.join(out)


def config_hash(cfg):
    return hashlib.sha1(format_config(cfg).encode()).hexdigest()[:12]


# Building blocks

def build_graph(cfg):
    if cfg.topology_file:
        topo = load_topology(cfg.topology_file)
        if topo.n != cfg.n:
            raise ConfigError(f'topology file has n={topo.n} but config says n={cfg.n}')
        return topo
    if cfg.topology == 'custom':
        raise ConfigError('custom topology needs [topology] file')
    return build_topology(cfg.topology, cfg.n, u=cfg.edge_prob, seed=cfg.topology_seed)


def build_comm(cfg):
    if cfg.comm == 'delayed':
        return Delayed(tau=cfg.tau)
    if cfg.comm == 'random':
        return RandomGraph(u=cfg.u, seed=cfg.comm_seed)
    if cfg.comm == 'switching':
        weights = [metropolis_weights(build_topology(kind, cfg.n, u=cfg.edge_prob, seed=cfg.topology_seed))
                   for kind in cfg.switch]
        return Switching(weights=tuple(weights), period=cfg.period)
    return Synchronous()


def build_objectives(cfg, seed):
    if cfg.objective == 'quadratic':
        objs, constants = make_quadratic(cfg.n, cfg.d, cfg.samples, seed,
                                         heterogeneity=cfg.heterogeneity, noise=cfg.noise, batch=cfg.batch)
        return objs, constants
    if cfg.objective == 'logistic':
        objs, constants, _ = make_logistic(cfg.n, cfg.d, cfg.samples, seed, scheme=cfg.partition,
                                           beta=cfg.beta_dirichlet, shards_per_worker=cfg.shards, reg=cfg.reg)
        return objs, constants
    if not cfg.dataset:
        raise ConfigError('dataset objective needs [objective] dataset = <csv path>')
    features, labels = load_dataset(cfg.dataset)
    objs, constants, _ = objectives_from_dataset(features, labels, cfg.n, kind=cfg.model, scheme=cfg.partition,
                                                 seed=seed, beta=cfg.beta_dirichlet,
                                                 shards_per_worker=cfg.shards, reg=cfg.reg)
    return objs, constants


def _lambda2_B(W, p):
    return spectral_summary(laplacian(nonlinear_weight_matrix(W, p))).lambda2


# Runs

def _run_consensus(cfg, seed, topo, W, out_dir):
    x0 = rng_stream(seed, TAG_INIT).standard_normal((cfg.n, cfg.d))
    pop0 = WorkerPopulation(x0)
    V0 = sync_index(pop0)
    proto = ConsensusProtocol(p=cfg.p, gamma=cfg.gamma, comm=build_comm(cfg), mix_on=cfg.mix_on)
    trace = simulate_consensus(pop0, W, proto, cfg.rounds, tol=cfg.tol * V0)
    write_csv(os.path.join(out_dir, 'trace.csv'), CONSENSUS_HEADER, trace.csv_rows())
    t_star = None
    if cfg.p < 1.0 and V0 > 0:
        t_star = finite_time_bound(V0, cfg.gamma, cfg.p, _lambda2_B(W, cfg.p))
    return None, first_hit(trace, cfg.tol * V0), t_star


def _run_training(cfg, seed, topo, W, out_dir):
    objs, constants = build_objectives(cfg, seed)
    beta = mixing_beta(W, cfg.gamma)
    schedule = make_schedule(constants, beta=beta, a=cfg.a)
    x0 = cfg.init_scale * rng_stream(seed, TAG_INIT).standard_normal((cfg.n, objs[0].d))
    common = dict(batch=cfg.batch, x0=x0)
    comm = build_comm(cfg)

    if cfg.algorithm == 'centralized':
        records = run_centralized(objs, schedule, cfg.T, seed, **common)
        variant = 'centralized'
    elif cfg.algorithm == 'gossip':
        records = run_gossip_sgd(objs, W, schedule, cfg.gamma, cfg.T, seed, comm=comm,
                                 sync_threshold=cfg.sync_threshold, **common)
        variant = 'gossip'
    elif cfg.algorithm == 'ngo':
        records = run_ngo_sgd(objs, W, schedule, cfg.gamma, cfg.p, cfg.T, seed, comm=comm,
                              mix_on=cfg.mix_on, **common)
        variant = 'ngo' if cfg.p < 1.0 else 'gossip'
    elif cfg.algorithm == 'local_sgd':
        records = run_local_sgd(objs, W, schedule, cfg.gamma, cfg.H, cfg.T, seed, comm=comm, **common)
        variant = None
    else:
        k = objs[0].d if cfg.k is None else cfg.k
        compressor = Compressor(kind=cfg.compressor, k=k, seed=seed)
        records = run_compressed_ngo(objs, W, schedule, cfg.gamma, cfg.p, cfg.T, compressor, seed,
                                     comm=comm, **common)
        variant = None

    write_csv(os.path.join(out_dir, 'trace.csv'), TRACE_HEADER, (r.csv_row() for r in records))
    hit = next((r.t for r in records if r.loss_gap_mean <= cfg.gap_tol), None)

    bound_total = None
    if variant is not None:
        x_star, _ = solve_optimum(objs)
        report = evaluate_bound(records, constants, schedule, variant, x_bar0=records[0].mean_state,
                                x_star=x_star, n=cfg.n, gamma=cfg.gamma, p=cfg.p,
                                lambda2B=_lambda2_B(W, cfg.p) if variant == 'ngo' else None)
        write_csv(os.path.join(out_dir, 'bound.csv'), BOUND_HEADER, [report.csv_row()])
        with open(os.path.join(out_dir, 'bound.txt'), 'w') as fh:
            fh.write(report.to_text())
        if constants.estimated and constants.sigma_bar_sq > 0:
            logger.info('bound variance term uses an empirical sigma^2 estimate')
        bound_total = report.total
    return records[-1].loss_gap_avg, hit, bound_total


def run_experiment(cfg, out_dir, axis=None, value=None):
    """Execute one configured run, write its files into out_dir and return its SummaryRow."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.perf_counter()
    topo = build_graph(cfg)
    W = metropolis_weights(topo)

    gaps, hits, bounds = [], [], []
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        run_dir = out_dir if cfg.repeats == 1 else os.path.join(out_dir, f'seed_{seed}')
        os.makedirs(run_dir, exist_ok=True)
        if cfg.algorithm == 'pure_consensus':
            gap, hit, bound = _run_consensus(cfg, seed, topo, W, run_dir)
        else:
            gap, hit, bound = _run_training(cfg, seed, topo, W, run_dir)
        gaps.append(gap)
        hits.append(hit)
        bounds.append(bound)

    with open(os.path.join(out_dir, 'config.ini'), 'w') as fh:
        fh.write(format_config(cfg))

    row = SummaryRow(
        config_hash=config_hash(cfg),
        axis=axis,
        value=value,
        final_gap_avg=None if gaps[0] is None else float(np.mean(gaps)),
        first_hit=None if any(h is None for h in hits) else max(hits),
        bound_total=None if bounds[0] is None else float(np.mean(bounds)),
        wall_seconds=time.perf_counter() - started,
    )
    write_csv(os.path.join(out_dir, 'summary.csv'), SummaryRow.HEADER, [row.csv_row()])
    logger.info('%s finished in %.2fs (hash %s)', cfg.algorithm, row.wall_seconds, row.config_hash)
    return row


def run_sweep(cfg, sweep, out_dir, threads=None):
    """One run per value of the swept axis, seeds held fixed; returns SummaryRows in axis order."""
    axis, field_name, axis_values = sweep
    configs = []
    for v in axis_values:
        try:
            configs.append(replace(cfg, **{field_name: v}))
        except ValueError as exc:
            raise ConfigError(f'{axis}={v}: {exc}') from None

    def one(item):
        v, c = item
        return run_experiment(c, os.path.join(out_dir, f'{axis}_{v}'), axis=axis, value=v)

    threads = threads or Config.THREADS
    with ThreadPoolExecutor(max_workers=max(1, min(threads, len(configs)))) as pool:
        rows = list(pool.map(one, zip(axis_values, configs)))
    write_csv(os.path.join(out_dir, 'summary.csv'), SummaryRow.HEADER, (r.csv_row() for r in rows))
    return rows


def spectra(kind, n, p=0.6, gamma=0.05, V0=1.0, edge_prob=None, seed=0, topology_file=None):
    """Spectral quantities of a topology as (name, value) pairs; None marks undefined values."""
    if topology_file:
        topo = load_topology(topology_file)
    else:
        topo = build_topology(kind, n, u=edge_prob, seed=seed, require_connected=False)
    out = [('n', topo.n), ('max_degree', topo.max_degree)]
    if not topo.is_connected:
        msg = f'{kind} topology with n={topo.n} is disconnected; lambda2 = 0'
        logger.warning(msg)
        warnings.warn(msg, StabilityWarning, stacklevel=2)
        lap = unweighted_laplacian(topo)
        summary = spectral_summary(lap, topo)
        out += [('lambda2_W', 0.0), ('lambda_n_W', None), ('lambda2_B', None),
                ('T_star', None), ('delay_threshold', None), ('lambda_n_unweighted', summary.lambda_n)]
        return out
    W = metropolis_weights(topo)
    summary = spectral_summary(laplacian(W), topo)
    lambda2_B = _lambda2_B(W, p)
    t_star = finite_time_bound(V0, gamma, p, lambda2_B) if p < 1.0 else None
    out += [
        ('lambda2_W', summary.lambda2),
        ('lambda_n_W', summary.lambda_n),
        ('lambda2_B', lambda2_B),
        ('T_star', t_star),
        ('delay_threshold', delay_threshold(summary)),
        ('stable_rate', stable_rate(gamma, summary)),
    ]
    return out

