from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from ngosim.errors import (AsymmetricMatrixError, InvalidEdgeError, InvalidExponentError,
                           InvalidKError, InvalidSizeError, ScheduleError, ShapeError)


def _frozen_array(values, ndim=None):
    arr = np.array(values, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f'expected a {ndim}-d array, got shape {arr.shape}')
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Topology:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 2:
            raise InvalidSizeError(f'need at least 2 workers, got {self.n}')
        normalized = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise InvalidEdgeError(f'self-loop at node {i}')
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidEdgeError(f'edge ({i}, {j}) out of range for n={self.n}')
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, 'edges', frozenset(normalized))

    @property
    def degrees(self):
        deg = [0] * self.n
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return tuple(deg)

    @property
    def max_degree(self):
        return max(self.degrees)

    def to_networkx(self):
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(sorted(self.edges))
        return graph

    @property
    def is_connected(self):
        return nx.is_connected(self.to_networkx())


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Symmetric doubly stochastic mixing weights; `topology` is optional provenance."""
    entries: np.ndarray
    topology: Topology = None

    def __post_init__(self):
        w = _frozen_array(self.entries, ndim=2)
        if w.shape[0] != w.shape[1]:
            raise ShapeError(f'weight matrix must be square, got {w.shape}')
        if not np.array_equal(w, w.T):
            raise AsymmetricMatrixError('weight matrix is not exactly symmetric')
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValueError('weight entries must lie in [0, 1]')
        if np.max(np.abs(w.sum(axis=1) - 1.0)) >= 1e-12:
            raise ValueError('weight matrix rows must sum to 1')
        if self.topology is not None:
            if self.topology.n != w.shape[0]:
                raise ShapeError('topology size does not match weight matrix')
            rows, cols = np.nonzero(w)
            for i, j in zip(rows, cols):
                if i != j and (min(i, j), max(i, j)) not in self.topology.edges:
                    raise InvalidEdgeError(f'weight on non-edge ({i}, {j})')
        object.__setattr__(self, 'entries', w)

    @property
    def n(self):
        return self.entries.shape[0]


@dataclass(frozen=True)
class SpectralSummary:
    eigenvalues: tuple
    lambda2: float
    lambda_n: float
    max_degree: int

    @property
    def connected(self):
        return self.lambda2 > 1e-10

    @property
    def n(self):
        return len(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class WorkerPopulation:
    """Per-worker parameter vectors, one row per worker. Scalars become d=1."""
    states: np.ndarray

    def __post_init__(self):
        x = np.array(self.states, dtype=float, copy=True)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ShapeError(f'states must be an (n, d) array, got shape {x.shape}')
        x.setflags(write=False)
        object.__setattr__(self, 'states', x)

    @property
    def n(self):
        return self.states.shape[0]

    @property
    def d(self):
        return self.states.shape[1]

    @property
    def mean(self):
        return self.states.mean(axis=0)


# Communication models

@dataclass(frozen=True)
class Synchronous:
    kind = 'synchronous'


@dataclass(frozen=True)
class Delayed:
    tau: int = 0
    kind = 'delayed'

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f'delay must be non-negative, got {self.tau}')


@dataclass(frozen=True)
class RandomGraph:
    u: float
    seed: int = 0
    kind = 'random'

    def __post_init__(self):
        if not 0.0 < self.u <= 1.0:
            raise ValueError(f'edge probability must be in (0, 1], got {self.u}')


@dataclass(frozen=True)
class Switching:
    weights: tuple
    schedule: tuple = None
    period: int = 1
    kind = 'switching'

    def __post_init__(self):
        if not self.weights:
            raise ValueError('switching model needs at least one weight matrix')
        if self.period < 1:
            raise ValueError('switching period must be >= 1')
        schedule = tuple(range(len(self.weights))) if self.schedule is None else tuple(self.schedule)
        if any(not 0 <= k < len(self.weights) for k in schedule):
            raise ValueError('switching schedule refers to a missing weight matrix')
        object.__setattr__(self, 'weights', tuple(self.weights))
        object.__setattr__(self, 'schedule', schedule)

    def weights_at(self, round_index):
        return self.weights[self.schedule[(round_index // self.period) % len(self.schedule)]]


def check_exponent(p, upper_open=False):
    hi_ok = p < 1.0 if upper_open else p <= 1.0
    if not (0.5 <= p and hi_ok):
        bracket = ')' if upper_open else ']'
        raise InvalidExponentError(f'coupling exponent {p} outside [0.5, 1{bracket}')


@dataclass(frozen=True)
class ConsensusProtocol:
    p: float = 0.6
    gamma: float = 0.05
    comm: object = field(default_factory=Synchronous)
    mix_on: str = 'half_step'

    def __post_init__(self):
        check_exponent(self.p)
        if self.gamma < 0:
            raise ValueError(f'gamma must be non-negative, got {self.gamma}')
        if self.mix_on not in ('half_step', 'pre_step'):
            raise ValueError(f"mix_on must be 'half_step' or 'pre_step', got {self.mix_on!r}")

    @property
    def linear(self):
        return self.p == 1.0


@dataclass(frozen=True)
class SyncRow:
    round: int
    V: float
    mean_state: np.ndarray


@dataclass
class SyncTrace:
    rows: list = field(default_factory=list)

    @property
    def V(self):
        return np.array([row.V for row in self.rows])

    def __len__(self):
        return len(self.rows)

    def csv_rows(self):
        for row in self.rows:
            yield (row.round, repr(float(row.V)), repr(float(np.linalg.norm(row.mean_state))))


# Objectives and problem constants

@dataclass(frozen=True, eq=False)
class LocalObjective:
    kind: str
    A: np.ndarray
    b: np.ndarray
    reg: float = 0.0

    def __post_init__(self):
        if self.kind not in ('quadratic', 'logistic'):
            raise ValueError(f'unknown objective kind {self.kind!r}')
        A = _frozen_array(self.A, ndim=2)
        b = _frozen_array(self.b, ndim=1)
        if A.shape[0] != b.shape[0]:
            raise ShapeError(f'{A.shape[0]} rows of data but {b.shape[0]} targets')
        if self.reg < 0:
            raise ValueError('regularization weight must be non-negative')
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'b', b)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]


@dataclass(frozen=True)
class ProblemConstants:
    mu: float
    L: float
    sigma_bar_sq: float = 0.0
    grad_bound_sq: float = 0.0
    estimated: bool = True

    def __post_init__(self):
        if not 0.0 < self.mu <= self.L * (1 + 1e-12):
            raise ValueError(f'need 0 < mu <= L, got mu={self.mu}, L={self.L}')

    @property
    def kappa(self):
        return max(self.L / self.mu, 1.0)


@dataclass(frozen=True, eq=False)
class Partition:
    scheme: str
    assignment: np.ndarray
    n: int

    def __post_init__(self):
        arr = np.array(self.assignment, dtype=int, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, 'assignment', arr)

    def indices(self, worker):
        return np.flatnonzero(self.assignment == worker)

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n)


# Optimization

@dataclass(frozen=True)
class Schedule:
    a: float
    mu: float

    def __post_init__(self):
        if self.mu <= 0:
            raise ScheduleError('schedule needs mu > 0')
        if self.a <= 0:
            raise ScheduleError('schedule offset a must be positive')

    def eta(self, t):
        return 4.0 / (self.mu * (self.a + t))

    def weight(self, t):
        return (self.a + t) ** 2

    def weight_sum(self, T):
        """S_T = sum of (a+t)^2 over t < T, in closed form."""
        a = self.a
        return T * a * a + a * T * (T - 1) + (T - 1) * T * (2 * T - 1) / 6.0

    def weights(self, T):
        return (self.a + np.arange(T, dtype=float)) ** 2


@dataclass(frozen=True)
class RunRecord:
    t: int
    V: float
    loss_gap_mean: float
    loss_gap_avg: float
    comm_rounds: int
    bits_sent: int
    mean_state: np.ndarray = field(default=None, compare=False, repr=False)

    def csv_row(self):
        return (self.t, repr(float(self.V)), repr(float(self.loss_gap_mean)),
                repr(float(self.loss_gap_avg)), self.comm_rounds, self.bits_sent)


@dataclass(frozen=True)
class BoundReport:
    variant: str
    T: int
    term_init: float
    term_variance: float
    term_sync: float
    observed_gap: float
    sync_cutoff: int

    @property
    def total(self):
        return self.term_init + self.term_variance + self.term_sync

    @property
    def holds(self):
        return self.observed_gap <= self.total

    def to_text(self):
        lines = [
            f'variant = {self.variant}',
            f'T = {self.T}',
            f'term_init = {self.term_init!r}',
            f'term_variance = {self.term_variance!r}',
            f'term_sync = {self.term_sync!r}',
            f'sync_cutoff = {self.sync_cutoff}',
            f'total = {self.total!r}',
            f'observed_gap = {self.observed_gap!r}',
        ]
        return '\n'.join(lines) + '\n'

    def csv_row(self):
        return (self.variant, self.T, repr(self.term_init), repr(self.term_variance),
                repr(self.term_sync), repr(self.total), repr(self.observed_gap))


# Compression

@dataclass(frozen=True)
class Compressor:
    kind: str
    k: int = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ('top_k', 'random_k', 'identity'):
            raise ValueError(f'unknown compressor kind {self.kind!r}')
        if self.kind != 'identity' and (self.k is None or self.k < 0):
            raise InvalidKError(f'{self.kind} needs k >= 0')

    def alpha_bound(self, d):
        if self.kind == 'identity':
            return 0.0
        if self.k > d:
            raise InvalidKError(f'k={self.k} exceeds dimension {d}')
        return 1.0 - self.k / d


@dataclass(frozen=True, eq=False)
class Payload:
    indices: np.ndarray
    values: np.ndarray
    d: int

    INDEX_BITS = 32
    VALUE_BITS = 64

    @property
    def bits(self):
        return len(self.indices) * (self.INDEX_BITS + self.VALUE_BITS)

    def to_dense(self):
        out = np.zeros(self.d)
        out[self.indices] = self.values
        return out


# Experiments

ALGORITHMS = ('centralized', 'gossip', 'ngo', 'local_sgd', 'compressed_ngo', 'pure_consensus')
COMM_MODELS = ('synchronous', 'delayed', 'random', 'switching')
OBJECTIVE_KINDS = ('quadratic', 'logistic', 'dataset')
PARTITION_SCHEMES = ('iid', 'shards', 'dirichlet')
COMPRESSOR_KINDS = ('top_k', 'random_k', 'identity')


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = 'ngo'
    seed: int = 0
    T: int = 2000
    rounds: int = 10000
    tol: float = 1e-8
    gap_tol: float = 1e-3
    repeats: int = 1

    topology: str = 'ring'
    n: int = 10
    edge_prob: float = None
    topology_seed: int = 0
    topology_file: str = None

    p: float = 0.6
    gamma: float = 0.05
    comm: str = 'synchronous'
    tau: int = 0
    u: float = None
    comm_seed: int = 0
    mix_on: str = 'half_step'
    switch: tuple = None
    period: int = 1

    a: float = None
    H: int = 1
    batch: int = None
    compressor: str = 'top_k'
    k: int = None
    sync_threshold: float = None

    objective: str = 'quadratic'
    d: int = 1
    samples: int = 50
    heterogeneity: float = 0.0
    noise: float = 0.1
    partition: str = 'dirichlet'
    beta_dirichlet: float = 0.5
    shards: int = 2
    reg: float = 1e-2
    dataset: str = None
    model: str = 'logistic'
    init_scale: float = 0.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f'unknown algorithm {self.algorithm!r}')
        if self.comm not in COMM_MODELS:
            raise ValueError(f'unknown communication model {self.comm!r}')
        if self.objective not in OBJECTIVE_KINDS:
            raise ValueError(f'unknown objective {self.objective!r}')
        if self.partition not in PARTITION_SCHEMES:
            raise ValueError(f'unknown partition scheme {self.partition!r}')
        if self.compressor not in COMPRESSOR_KINDS:
            raise ValueError(f'unknown compressor {self.compressor!r}')
        if self.comm == 'random' and self.u is None:
            raise ValueError('random communication needs u')
        if self.comm == 'switching' and not self.switch:
            raise ValueError('switching communication needs a switch list of topologies')
        if self.T < 1 or self.rounds < 1 or self.repeats < 1 or self.n < 1 or self.d < 1:
            raise ValueError('T, rounds, repeats, n and d must be positive')


@dataclass(frozen=True)
class SummaryRow:
    config_hash: str
    axis: str
    value: object
    final_gap_avg: float
    first_hit: int
    bound_total: float
    wall_seconds: float

    HEADER = ('config_hash', 'axis', 'value', 'final_gap_avg', 'first_hit', 'bound_total', 'wall_seconds')

    def csv_row(self):
        def fmt(v):
            return '' if v is None else repr(float(v))
        return (self.config_hash, self.axis or '', '' if self.value is None else self.value,
                fmt(self.final_gap_avg), -1 if self.first_hit is None else self.first_hit,
                fmt(self.bound_total), f'{self.wall_seconds:.3f}')
