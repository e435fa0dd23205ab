import logging
import math
import warnings
from collections import deque

import numpy as np

from config import Config
from ngosim.errors import IncompleteTraceError, ScheduleError, ShapeError, StabilityWarning
from ngosim.models import (BoundReport, ConsensusProtocol, Delayed, Payload, RunRecord, Schedule,
                           Synchronous, WorkerPopulation)
from ngosim.services.compress import compress
from ngosim.services.consensus import finite_time_bound, gossip_round, sync_index
from ngosim.services.graph import laplacian, spectral_summary
from ngosim.services.objective import (curvature_range, full_gradient, global_loss,
                                       solve_optimum, stochastic_gradient)
from ngosim.utils import TAG_SAMPLE, rng_stream

logger = logging.getLogger(__name__)

VARIANTS = ('centralized', 'gossip', 'ngo')
SYNC_NEGLIGIBLE = 1e-12


# Schedules

def mixing_beta(W, gamma):
    """beta = 1 - gamma * lambda2(L(W)), the linear contraction factor."""
    return 1.0 - gamma * spectral_summary(laplacian(W)).lambda2


def required_offset(variant, kappa, beta=None):
    if variant in ('ngo', 'compressed_ngo'):
        if beta is None or beta <= 0:
            raise ScheduleError('nonlinear schedule constraint needs beta > 0')
        return max(5.0 / beta, 15.0 * kappa)
    return 16.0 * kappa


def make_schedule(constants, beta=None, a=None):
    """Schedule meeting every runner's offset constraint unless `a` is given."""
    if a is None:
        a = 16.0 * constants.kappa
        if beta is not None:
            a = max(a, 5.0 / beta)
    return Schedule(a=a, mu=constants.mu)


def check_schedule(schedule, variant, mu, L, beta=None, strict=None):
    strict = Config.STRICT_SCHEDULE if strict is None else strict
    kappa = max(L / mu, 1.0)
    need = required_offset(variant, kappa, beta)
    problems = []
    if schedule.a < need:
        problems.append(f'a={schedule.a:.4g} below the {variant} requirement {need:.4g}')
    if schedule.eta(0) > 1.0 / (4.0 * L) * (1 + 1e-12):
        problems.append(f'eta_0={schedule.eta(0):.4g} exceeds 1/(4L)={1.0 / (4.0 * L):.4g}')
    if not problems:
        return True
    msg = '; '.join(problems)
    if strict:
        raise ScheduleError(msg)
    logger.warning(msg)
    warnings.warn(msg, StabilityWarning, stacklevel=3)
    return False


# Training loops

class _Tracker:
    """Accumulates the weighted-average iterate and emits RunRecords."""

    def __init__(self, objs, schedule, optimum):
        self.objs = objs
        self.schedule = schedule
        self.f_star = optimum[1]
        self.numerator = None
        self.weight_total = 0.0
        self.records = []

    def record(self, t, x, comm_rounds, bits_sent, V=None):
        mean = x.mean(axis=0)
        w = self.schedule.weight(t)
        self.numerator = w * mean if self.numerator is None else self.numerator + w * mean
        self.weight_total += w
        x_avg = self.numerator / self.weight_total
        self.records.append(RunRecord(
            t=t,
            V=sync_index(WorkerPopulation(x)) if V is None else V,
            loss_gap_mean=global_loss(self.objs, mean) - self.f_star,
            loss_gap_avg=global_loss(self.objs, x_avg) - self.f_star,
            comm_rounds=comm_rounds,
            bits_sent=bits_sent,
            mean_state=mean,
        ))


def _initial_states(objs, x0):
    n, d = len(objs), objs[0].d
    if x0 is None:
        return np.zeros((n, d))
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (d,):
        return np.tile(x0, (n, 1))
    if x0.shape != (n, d):
        raise ShapeError(f'initial states must be ({n}, {d}) or ({d},), got {x0.shape}')
    return x0.copy()


def _batch_for(obj, batch):
    return obj.m if batch is None else min(batch, obj.m)


def _gradients(objs, x, t, seed, batch):
    g = np.empty_like(x)
    for i, obj in enumerate(objs):
        size = _batch_for(obj, batch)
        # full batches draw nothing
        rng = rng_stream(seed, TAG_SAMPLE, t, i) if size < obj.m else None
        g[i] = stochastic_gradient(obj, x[i], size, rng)
    return g


def _prepare(objs, schedule, variant, W, gamma, strict, optimum):
    if not objs:
        raise ShapeError('need at least one worker objective')
    mu, L = curvature_range(objs)
    beta = mixing_beta(W, gamma) if W is not None and variant in ('ngo', 'compressed_ngo') else None
    check_schedule(schedule, variant, mu, L, beta=beta, strict=strict)
    return optimum if optimum is not None else solve_optimum(objs)


def run_centralized(objs, schedule, T, seed, batch=None, x0=None, optimum=None, strict=None):
    """One shared model stepped with the average of the n workers' stochastic gradients."""
    if T < 1:
        raise ValueError('T must be >= 1')
    optimum = _prepare(objs, schedule, 'centralized', None, 0.0, strict, optimum)
    x = _initial_states(objs, x0).mean(axis=0)
    n = len(objs)
    tracker = _Tracker(objs, schedule, optimum)
    for t in range(T):
        tracker.record(t, np.tile(x, (n, 1)), 0, 0, V=0.0)
        if t == T - 1:
            break
        g = _gradients(objs, np.tile(x, (n, 1)), t, seed, batch)
        x = x - schedule.eta(t) * g.mean(axis=0)
    logger.info('centralized T=%d final gap %.3e', T, tracker.records[-1].loss_gap_avg)
    return tracker.records


def _run_decentralized(objs, W, schedule, proto, T, seed, variant, *, period=1, compressor=None,
                       batch=None, x0=None, optimum=None, strict=None, sync_threshold=None,
                       max_sync_rounds=100, hook=None):
    if T < 1:
        raise ValueError('T must be >= 1')
    if period < 1:
        raise ValueError('communication period H must be >= 1')
    optimum = _prepare(objs, schedule, variant, W, proto.gamma, strict, optimum)
    x = _initial_states(objs, x0)
    n, d = x.shape
    tracker = _Tracker(objs, schedule, optimum)
    history = deque(maxlen=proto.comm.tau + 1) if isinstance(proto.comm, Delayed) else None
    replicas = np.zeros_like(x) if compressor is not None else None
    comm_rounds = 0
    bits_sent = 0

    for t in range(T):
        tracker.record(t, x, comm_rounds, bits_sent)
        if t == T - 1:
            break
        half = x - schedule.eta(t) * _gradients(objs, x, t, seed, batch)
        if (t + 1) % period != 0:
            x = half
            continue

        if compressor is not None:
            for i in range(n):
                payload, q = compress(compressor, half[i] - replicas[i], round_index=comm_rounds, worker=i)
                replicas[i] = replicas[i] + q
                bits_sent += payload.bits
            if hook is not None:
                hook(t, replicas.copy())
            # delayed neighbours see stale replicas
            if history is not None:
                history.append(replicas.copy())
            x = gossip_round(replicas, W, proto, round_index=comm_rounds, history=history, onto=half).states
            comm_rounds += 1
            continue

        src = half if proto.mix_on == 'half_step' else x
        if hook is not None:
            hook(t, src.copy())
        if history is not None:
            history.append(src)
        x = gossip_round(src, W, proto, round_index=comm_rounds, history=history, onto=half).states
        comm_rounds += 1
        bits_sent += n * d * Payload.VALUE_BITS

        if sync_threshold is not None:
            extra = 0
            while sync_index(WorkerPopulation(x)) > sync_threshold and extra < max_sync_rounds:
                if history is not None:
                    history.append(x)
                x = gossip_round(x, W, proto, round_index=comm_rounds, history=history).states
                comm_rounds += 1
                bits_sent += n * d * Payload.VALUE_BITS
                extra += 1

    last = tracker.records[-1]
    logger.info('%s p=%s gamma=%s T=%d: V=%.3e gap=%.3e comm=%d',
                variant, proto.p, proto.gamma, T, last.V, last.loss_gap_avg, last.comm_rounds)
    return tracker.records


def run_gossip_sgd(objs, W, schedule, gamma, T, seed, comm=None, **kwargs):
    proto = ConsensusProtocol(p=1.0, gamma=gamma, comm=comm or Synchronous())
    return _run_decentralized(objs, W, schedule, proto, T, seed, 'gossip', **kwargs)


def run_ngo_sgd(objs, W, schedule, gamma, p, T, seed, comm=None, mix_on='half_step', **kwargs):
    proto = ConsensusProtocol(p=p, gamma=gamma, comm=comm or Synchronous(), mix_on=mix_on)
    return _run_decentralized(objs, W, schedule, proto, T, seed, 'ngo', **kwargs)


def run_local_sgd(objs, W, schedule, gamma, H, T, seed, comm=None, **kwargs):
    """Linear gossip only on rounds with (t+1) mod H == 0."""
    proto = ConsensusProtocol(p=1.0, gamma=gamma, comm=comm or Synchronous())
    return _run_decentralized(objs, W, schedule, proto, T, seed, 'gossip', period=H, **kwargs)


def run_compressed_ngo(objs, W, schedule, gamma, p, T, compressor, seed, comm=None, **kwargs):
    """NGO mixing over public replicas updated by compressed corrections."""
    proto = ConsensusProtocol(p=p, gamma=gamma, comm=comm or Synchronous())
    return _run_decentralized(objs, W, schedule, proto, T, seed, 'compressed_ngo',
                              compressor=compressor, **kwargs)


# Averaging and bounds

def weighted_average_iterate(trajectory, schedule, T):
    if trajectory and isinstance(trajectory[0], RunRecord):
        trajectory = [r.mean_state for r in trajectory]
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim == 1:
        traj = traj.reshape(-1, 1)
    if T < 1 or T > len(traj):
        raise ValueError(f'T={T} outside the trajectory length {len(traj)}')
    w = schedule.weights(T)
    return (w[:, None] * traj[:T]).sum(axis=0) / w.sum()


def evaluate_bound(records, constants, schedule, variant, x_bar0, x_star, n, T=None,
                   gamma=None, p=None, lambda2B=None):
    """
    Optimality-gap bound for `variant` at horizon T, built from the recorded trace.

    The ngo sync sum stops at round ceil(T*) of the finite-time bound, or at the last
    round whose V is still above SYNC_NEGLIGIBLE of its peak if that comes later.
    Gossip sums every round and centralized has no sync term.
    """
    if variant not in VARIANTS:
        raise ValueError(f'unknown bound variant {variant!r}')
    T = len(records) if T is None else T
    if T < 1 or len(records) < T:
        raise IncompleteTraceError(f'need records for rounds 0..{T - 1}, have {len(records)}')
    V = np.array([r.V if r.V is not None else math.nan for r in records[:T]], dtype=float)
    if np.any(np.isnan(V)):
        raise IncompleteTraceError('trace has rounds without V')

    mu, L, a = constants.mu, constants.L, schedule.a
    S = schedule.weight_sum(T)
    dist0 = np.asarray(x_bar0, dtype=float) - np.asarray(x_star, dtype=float)
    term_init = mu * a ** 3 / (8.0 * S) * float(dist0 @ dist0)
    term_variance = 4.0 * T * (T + 2.0 * a) * constants.sigma_bar_sq / (mu * n * S)

    cutoff = T - 1
    if variant == 'centralized':
        term_sync, cutoff = 0.0, -1
    else:
        if variant == 'ngo':
            # rounds after T* drop out only once V has actually settled there
            t_star = finite_time_bound(V[0], gamma, p, lambda2B)
            unsettled = np.flatnonzero(V > SYNC_NEGLIGIBLE * V.max())
            last_unsettled = int(unsettled[-1]) if len(unsettled) else -1
            cutoff = min(T - 1, max(math.ceil(t_star), last_unsettled))
        w = schedule.weights(cutoff + 1)
        term_sync = (2.0 * L + mu) / (n * S) * float(w @ V[:cutoff + 1])

    return BoundReport(variant=variant, T=T, term_init=term_init, term_variance=term_variance,
                       term_sync=term_sync, observed_gap=records[T - 1].loss_gap_avg,
                       sync_cutoff=cutoff)


def descent_residuals(records, constants, schedule, x_star, n):
    """
    Per-round (lhs, rhs) of the averaged-iterate descent inequality.

    Valid for zero-noise runs with mean-preserving mixing when every worker shares
    the global mu and L; the inequality holds when lhs <= rhs.
    """
    mu, L = constants.mu, constants.L
    x_star = np.asarray(x_star, dtype=float)
    out = []
    for t in range(len(records) - 1):
        eta = schedule.eta(t)
        now = records[t].mean_state - x_star
        nxt = records[t + 1].mean_state - x_star
        lhs = float(nxt @ nxt)
        rhs = ((1.0 - mu * eta / 2.0) * float(now @ now)
               - 2.0 * eta * (1.0 - 2.0 * L * eta) * records[t].loss_gap_mean
               + eta * (2.0 * eta * L * L + L * eta + mu) * records[t].V / n)
        out.append((lhs, rhs))
    return out


def sync_parameter(grads_local, grads_at_mean, eta, epsilon=0.5):
    """
    nu_t = sqrt(min(||sum grad f_i(x_bar)||^2 / ||sum grad f_i(x_i) - sum grad f_i(x_bar)||^2,
    eta^(-2 epsilon))); a synchronized population returns the cap eta^(-epsilon).
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f'epsilon must lie in (0, 1), got {epsilon}')
    at_mean = np.asarray(grads_at_mean, dtype=float).sum(axis=0)
    diff = np.asarray(grads_local, dtype=float).sum(axis=0) - at_mean
    denominator = float(np.sum(diff * diff))
    if denominator == 0.0:
        return eta ** (-epsilon)
    ratio = float(np.sum(at_mean * at_mean)) / denominator
    return math.sqrt(min(ratio, eta ** (-2.0 * epsilon)))


def sync_parameter_at(objs, states, eta, epsilon=0.5):
    states = np.asarray(states, dtype=float)
    mean = states.mean(axis=0)
    local = [full_gradient(o, x) for o, x in zip(objs, states)]
    at_mean = [full_gradient(o, mean) for o in objs]
    return sync_parameter(local, at_mean, eta, epsilon)
