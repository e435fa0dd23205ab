import logging
import math
import warnings
from collections import deque

import numpy as np

from ngosim.errors import BoundUndefinedError, ShapeError, StabilityWarning
from ngosim.models import (RandomGraph, SyncRow, SyncTrace, Switching, Delayed,
                           WeightMatrix, WorkerPopulation, check_exponent)
from ngosim.utils import TAG_EDGES, rng_stream

logger = logging.getLogger(__name__)


def coupling(z, p):
    check_exponent(p)
    z = np.asarray(z, dtype=float)
    if p == 1.0:
        return z.copy()
    return np.sign(z) * np.abs(z) ** (2.0 * p - 1.0)


def sync_index(pop):
    x = pop.states if isinstance(pop, WorkerPopulation) else WorkerPopulation(pop).states
    delta = x - x.mean(axis=0)
    return float(np.sum(delta * delta))


def _entries(W):
    return W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)


def _edge_arrays(w):
    off = w.copy()
    np.fill_diagonal(off, 0.0)
    rows, cols = np.nonzero(off)
    return rows, cols, off[rows, cols]


def _support_degree(w):
    off = w.copy()
    np.fill_diagonal(off, 0.0)
    return int((off != 0).sum(axis=1).max())


def check_stability(W, proto):
    """Warn when linear gossip runs with gamma >= 1/Delta. Returns True when stable."""
    if not proto.linear or isinstance(proto.comm, RandomGraph):
        return True
    weights = proto.comm.weights if isinstance(proto.comm, Switching) else (W,)
    max_degree = max(_support_degree(_entries(w)) for w in weights)
    if proto.gamma * max_degree < 1.0:
        return True
    msg = f'gamma={proto.gamma} >= 1/Delta (Delta={max_degree}); linear gossip may diverge'
    logger.warning(msg)
    warnings.warn(msg, StabilityWarning, stacklevel=3)
    return False


def _random_edges(w, comm, round_index):
    """Bernoulli(u) subgraph of the support of w; realized edges weigh 1/(u*Delta)."""
    rows, cols, _ = _edge_arrays(w)
    upper = rows < cols
    rows, cols = rows[upper], cols[upper]
    keep = rng_stream(comm.seed, TAG_EDGES, round_index).random(len(rows)) < comm.u
    rows, cols = rows[keep], cols[keep]
    scale = 1.0 / (comm.u * _support_degree(w))
    both_i = np.concatenate([rows, cols])
    both_j = np.concatenate([cols, rows])
    return both_i, both_j, np.full(len(both_i), scale)


def mixing_increment(src, W, proto, round_index=0):
    """gamma * sum_j W_ij phi(src_j - src_i) for every worker, from one frozen snapshot."""
    comm = proto.comm
    if isinstance(comm, Switching):
        w = _entries(comm.weights_at(round_index))
    else:
        w = _entries(W)
    if w.shape != (src.shape[0], src.shape[0]):
        raise ShapeError(f'weights are {w.shape} but there are {src.shape[0]} workers')
    if isinstance(comm, RandomGraph):
        rows, cols, vals = _random_edges(w, comm, round_index)
    else:
        rows, cols, vals = _edge_arrays(w)
    out = np.zeros_like(src)
    if len(rows):
        contrib = vals[:, None] * coupling(src[cols] - src[rows], proto.p)
        np.add.at(out, rows, contrib)
    return proto.gamma * out


def gossip_round(pop, W, proto, round_index=0, history=None, onto=None):
    """
    One consensus round.

    `history` holds earlier populations for the delayed model (oldest first, the
    stale source is history[0]). `onto` is the state the increment is added to when
    it differs from the source, as in the pre-step mixing variant.
    """
    x = pop.states if isinstance(pop, WorkerPopulation) else WorkerPopulation(pop).states
    if round_index == 0:
        check_stability(W, proto)

    src = x
    if isinstance(proto.comm, Delayed) and history:
        stale = history[0]
        src = stale.states if isinstance(stale, WorkerPopulation) else np.asarray(stale, dtype=float)

    base = x if onto is None else np.asarray(onto, dtype=float).reshape(x.shape)
    return WorkerPopulation(base + mixing_increment(src, W, proto, round_index))


def finite_time_bound(V0, gamma, p, lambda2B, constant=4.0):
    """Settling time V0^(1-p) / (constant * gamma * (1-p) * lambda2(L(B))^p) of the nonlinear flow."""
    if p == 1.0:
        raise BoundUndefinedError('finite-time bound is undefined for linear coupling (p=1)')
    check_exponent(p, upper_open=True)
    if V0 == 0:
        return 0.0
    if V0 < 0:
        raise ValueError(f'V0 must be non-negative, got {V0}')
    if lambda2B <= 0 or gamma <= 0:
        raise BoundUndefinedError('finite-time bound needs gamma > 0 and a connected B')
    return V0 ** (1.0 - p) / (constant * gamma * (1.0 - p) * lambda2B ** p)


def chatter_band(gamma, p, W):
    """Predicted V level where forward-Euler steps of the sign-like flow start to oscillate."""
    check_exponent(p)
    if p == 1.0:
        return 0.0
    w = _entries(W)
    _, _, vals = _edge_arrays(w)
    if not len(vals):
        return 0.0
    amplitude = (gamma * _support_degree(w) * vals.max()) ** (1.0 / (2.0 - 2.0 * p))
    return w.shape[0] * amplitude ** 2


def delay_threshold(spectral):
    if spectral.lambda_n <= 0:
        raise BoundUndefinedError('delay threshold needs lambda_n > 0')
    return math.pi / (2.0 * spectral.lambda_n)


def simulate_consensus(pop0, W, proto, max_rounds, tol=0.0):
    if max_rounds < 1:
        raise ValueError('max_rounds must be >= 1')
    pop = pop0 if isinstance(pop0, WorkerPopulation) else WorkerPopulation(pop0)
    trace = SyncTrace()
    V = sync_index(pop)
    trace.rows.append(SyncRow(round=0, V=V, mean_state=pop.mean))
    if V <= tol:
        return trace

    history = None
    if isinstance(proto.comm, Delayed):
        history = deque(maxlen=proto.comm.tau + 1)

    for t in range(max_rounds):
        if history is not None:
            history.append(pop)
        pop = gossip_round(pop, W, proto, round_index=t, history=history)
        V = sync_index(pop)
        trace.rows.append(SyncRow(round=t + 1, V=V, mean_state=pop.mean))
        if not math.isfinite(V):
            logger.warning('consensus diverged at round %d', t + 1)
            break
        if V <= tol:
            break
    logger.debug('consensus p=%s gamma=%s stopped at round %d with V=%.3e',
                 proto.p, proto.gamma, trace.rows[-1].round, V)
    return trace


def first_hit(trace, tol):
    """First round whose V is at or below tol, or None."""
    rows = trace.rows if isinstance(trace, SyncTrace) else trace
    for row in rows:
        if row.V <= tol:
            return row.round
    return None
