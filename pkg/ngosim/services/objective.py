import logging
import warnings

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit

from ngosim.errors import NoDataError, OptimizerError, PartitionError, ShapeError, StabilityWarning
from ngosim.models import LocalObjective, Partition, ProblemConstants
from ngosim.services.graph import jacobi_eigenvalues
from ngosim.utils import TAG_DATA, TAG_PARTITION, TAG_PILOT, rng_stream

logger = logging.getLogger(__name__)

DEGENERATE_MU = 1e-10
DEGENERATE_REG = 1e-6
PARTITION_RESAMPLES = 100
PILOT_STEPS = 10


# Losses and gradients

def local_loss(obj, x):
    x = np.asarray(x, dtype=float)
    if obj.kind == 'quadratic':
        r = obj.A @ x - obj.b
        value = 0.5 * float(r @ r) / obj.m
    else:
        value = float(-np.mean(log_expit(obj.b * (obj.A @ x))))
    return value + 0.5 * obj.reg * float(x @ x)


def batch_gradient(obj, x, idx):
    """Gradient of the loss restricted to the samples in `idx`."""
    if obj.m == 0:
        raise NoDataError('objective holds no samples')
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.d,):
        raise ShapeError(f'expected a vector of length {obj.d}, got shape {x.shape}')
    A = obj.A[idx]
    b = obj.b[idx]
    if obj.kind == 'quadratic':
        g = A.T @ (A @ x - b) / len(b)
    else:
        g = -A.T @ (b * expit(-b * (A @ x))) / len(b)
    return g + obj.reg * x


def full_gradient(obj, x):
    return batch_gradient(obj, x, np.arange(obj.m))


def stochastic_gradient(obj, x, batch, rng):
    if obj.m == 0:
        raise NoDataError('objective holds no samples')
    if not 1 <= batch <= obj.m:
        raise ValueError(f'batch must be in [1, {obj.m}], got {batch}')
    if batch == obj.m:
        idx = np.arange(obj.m)
    else:
        idx = rng.choice(obj.m, size=batch, replace=False)
    return batch_gradient(obj, x, idx)


def global_loss(objs, x):
    return sum(local_loss(obj, x) for obj in objs) / len(objs)


def global_gradient(objs, x):
    return sum(full_gradient(obj, x) for obj in objs) / len(objs)


def hessian(obj, x=None):
    if obj.kind == 'quadratic':
        h = obj.A.T @ obj.A / obj.m
    else:
        if x is None:
            raise ValueError('logistic hessian needs a point')
        s = expit(obj.A @ x)
        h = (obj.A.T * (s * (1.0 - s))) @ obj.A / obj.m
    return h + obj.reg * np.eye(obj.d)


# Instances

def _with_reg(objs, extra):
    return [LocalObjective(kind=o.kind, A=o.A, b=o.b, reg=o.reg + extra) for o in objs]


def _regularize_if_degenerate(objs):
    h = sum(hessian(o) for o in objs) / len(objs)
    eigs = jacobi_eigenvalues(h)
    if eigs[0] >= DEGENERATE_MU:
        return objs
    msg = f'global hessian is degenerate (mu={eigs[0]:.3e}); adding regularization {DEGENERATE_REG}'
    logger.warning(msg)
    warnings.warn(msg, StabilityWarning, stacklevel=3)
    return _with_reg(objs, DEGENERATE_REG)


def quadratic_from_centers(centers):
    """Workers with f_i(x) = 1/2 ||x - c_i||^2."""
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 1:
        centers = centers.reshape(-1, 1)
    d = centers.shape[1]
    scale = np.sqrt(d)
    return [LocalObjective(kind='quadratic', A=scale * np.eye(d), b=scale * c) for c in centers]


def make_quadratic(n, d, samples_per_worker, seed, heterogeneity=0.0, noise=0.1, batch=None):
    """
    Least-squares workers around a shared ground truth.

    heterogeneity shifts every worker's feature mean and target offset; 0 gives
    i.i.d. workers.
    """
    if d < 1 or n < 1 or samples_per_worker < 1:
        raise ValueError('n, d and samples_per_worker must be positive')
    if heterogeneity < 0:
        raise ValueError('heterogeneity must be non-negative')
    x_true = rng_stream(seed, TAG_DATA).standard_normal(d)
    objs = []
    for i in range(n):
        rng = rng_stream(seed, TAG_DATA, i)
        shift = heterogeneity * rng.standard_normal(d)
        A = rng.standard_normal((samples_per_worker, d)) + shift
        offset = heterogeneity * rng.standard_normal()
        b = A @ x_true + offset + noise * rng.standard_normal(samples_per_worker)
        objs.append(LocalObjective(kind='quadratic', A=A, b=b))
    objs = _regularize_if_degenerate(objs)
    return objs, problem_constants(objs, batch=batch, seed=seed)


def make_logistic(n, d, samples_per_worker, seed, classes=4, scheme='dirichlet', beta=0.5,
                  shards_per_worker=2, reg=1e-2, separation=2.0):
    """
    Synthetic multi-class blobs; the upper half of the classes is the +1 target.
    Samples are dealt to workers by `scheme` so label skew follows the partition.
    """
    rng = rng_stream(seed, TAG_DATA)
    total = n * samples_per_worker
    centers = separation * rng.standard_normal((classes, d))
    labels = rng.integers(classes, size=total)
    features = centers[labels] + rng.standard_normal((total, d))
    targets = np.where(labels >= classes // 2, 1.0, -1.0)
    part = partition_data(labels, n, scheme=scheme, seed=seed, beta=beta,
                          shards_per_worker=shards_per_worker)
    objs = [LocalObjective(kind='logistic', A=features[part.indices(i)], b=targets[part.indices(i)], reg=reg)
            for i in range(n)]
    return objs, problem_constants(objs, seed=seed), part


def load_dataset(path):
    """Read feature_0..feature_{d-1},label columns."""
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except pd.errors.EmptyDataError:
        raise NoDataError(f'{path}: empty dataset file') from None
    feature_cols = sorted((c for c in frame.columns if str(c).startswith('feature_')),
                          key=lambda c: int(c.split('_', 1)[1]))
    if 'label' not in frame.columns or not feature_cols:
        raise NoDataError(f'{path}: expected feature_0..feature_k and label columns')
    if frame.empty:
        raise NoDataError(f'{path}: no samples')
    features = frame[feature_cols].to_numpy(dtype=float)
    labels = frame['label'].to_numpy(dtype=float)
    logger.info('loaded %d samples with %d features from %s', len(labels), features.shape[1], path)
    return features, labels


def objectives_from_dataset(features, labels, n, kind='logistic', scheme='iid', seed=0,
                            beta=0.5, shards_per_worker=2, reg=1e-2):
    """Split a dataset across workers. Logistic targets are +1 for labels above the median class."""
    classes = np.unique(labels)
    part = partition_data(labels, n,
                          scheme=scheme, seed=seed, beta=beta, shards_per_worker=shards_per_worker)
    if kind == 'logistic':
        upper = classes[len(classes) // 2:] if len(classes) > 1 else classes
        targets = np.where(np.isin(labels, upper), 1.0, -1.0)
    else:
        targets = labels.astype(float)
        reg = 0.0
    objs = [LocalObjective(kind=kind, A=features[part.indices(i)], b=targets[part.indices(i)], reg=reg)
            for i in range(n)]
    if kind == 'quadratic':
        objs = _regularize_if_degenerate(objs)
    return objs, problem_constants(objs, seed=seed), part


# Constants and optimum

def curvature_range(objs):
    if all(o.kind == 'quadratic' for o in objs):
        eigs = jacobi_eigenvalues(sum(hessian(o) for o in objs) / len(objs))
        return float(eigs[0]), float(eigs[-1])
    # logistic: the loss curvature is at most 1/4 of the data covariance; reg is the global floor
    data = sum(o.A.T @ o.A / o.m for o in objs) / len(objs)
    reg = min(o.reg for o in objs)
    top = float(jacobi_eigenvalues(data)[-1]) / 4.0 + max(o.reg for o in objs)
    return reg, top


def pilot_trajectory(objs, steps=PILOT_STEPS):
    """Full-gradient descent from the origin with step 1/L; returns every visited point."""
    _, L = curvature_range(objs)
    x = np.zeros(objs[0].d)
    points = [x]
    for _ in range(steps - 1):
        x = x - global_gradient(objs, x) / L
        points.append(x)
    return points


def estimate_noise(objs, batch=None, seed=0, samples=10_000, points=None):
    """
    Empirical sigma_bar^2 and G^2 from sampled stochastic gradients.

    Samples are taken along a pilot trajectory unless `points` is given. Full
    batches carry no sampling noise, so sigma_bar^2 is 0 then.
    """
    if points is None:
        points = pilot_trajectory(objs)
    n = len(objs)
    per_point = max(1, samples // (n * len(points)))
    sigma_sq = np.zeros(n)
    grad_sq = 0.0
    for i, obj in enumerate(objs):
        full_batch = batch is None or batch >= obj.m
        rng = rng_stream(seed, TAG_PILOT, i)
        acc = 0.0
        for x in points:
            g_full = full_gradient(obj, x)
            if full_batch:
                grad_sq = max(grad_sq, float(g_full @ g_full))
                continue
            for _ in range(per_point):
                g = stochastic_gradient(obj, x, batch, rng)
                acc += float((g - g_full) @ (g - g_full))
                grad_sq = max(grad_sq, float(g @ g))
        if not full_batch:
            sigma_sq[i] = acc / (per_point * len(points))
    return float(sigma_sq.mean()), grad_sq


def problem_constants(objs, batch=None, seed=0, samples=10_000):
    mu, L = curvature_range(objs)
    sigma_bar_sq, grad_bound_sq = estimate_noise(objs, batch=batch, seed=seed, samples=samples)
    constants = ProblemConstants(mu=mu, L=L, sigma_bar_sq=sigma_bar_sq,
                                 grad_bound_sq=grad_bound_sq, estimated=True)
    logger.debug('problem constants mu=%.4g L=%.4g sigma^2=%.4g G^2=%.4g',
                 mu, L, sigma_bar_sq, grad_bound_sq)
    return constants


def solve_optimum(objs, tol=1e-10, max_iter=1_000_000):
    """Global minimizer of the averaged objective and its value."""
    if not objs:
        raise NoDataError('no objectives')
    kinds = {o.kind for o in objs}
    if len(kinds) > 1:
        raise ValueError('cannot mix quadratic and logistic workers')
    if kinds == {'quadratic'}:
        h = sum(hessian(o) for o in objs) / len(objs)
        rhs = sum(o.A.T @ o.b / o.m for o in objs) / len(objs)
        x_star = np.linalg.solve(h, rhs)
        return x_star, global_loss(objs, x_star)

    _, L = curvature_range(objs)
    x = np.zeros(objs[0].d)
    for it in range(max_iter):
        g = global_gradient(objs, x)
        if np.linalg.norm(g) <= tol:
            logger.debug('logistic optimum after %d iterations', it)
            return x, global_loss(objs, x)
        x = x - g / L
    raise OptimizerError(f'gradient descent did not reach ||grad|| <= {tol} in {max_iter} iterations')


# Partitioning

def _dirichlet_assignment(labels, n, beta, rng):
    assignment = np.empty(len(labels), dtype=int)
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        rng.shuffle(idx)
        counts = rng.multinomial(len(idx), rng.dirichlet(beta * np.ones(n)))
        assignment[idx] = np.repeat(np.arange(n), counts)
    return assignment


def partition_data(labels, n, scheme='iid', seed=0, beta=0.5, shards_per_worker=2):
    """
    Assign every sample to exactly one of n workers.

    `labels` is a label array, or a plain sample count for the iid scheme.
    """
    if np.ndim(labels) == 0:
        total, labels = int(labels), None
    else:
        labels = np.asarray(labels)
        total = len(labels)
    if total < n:
        raise PartitionError(f'{total} samples cannot fill {n} workers')
    if scheme != 'iid' and labels is None:
        raise ValueError(f'{scheme} partition needs labels')

    for attempt in range(PARTITION_RESAMPLES):
        rng = rng_stream(seed, TAG_PARTITION, attempt)
        if scheme == 'iid':
            assignment = np.empty(total, dtype=int)
            for w, chunk in enumerate(np.array_split(rng.permutation(total), n)):
                assignment[chunk] = w
        elif scheme == 'shards':
            shard_count = n * shards_per_worker
            if total < shard_count:
                raise PartitionError(f'{total} samples cannot make {shard_count} shards')
            shards = np.array_split(np.argsort(labels, kind='stable'), shard_count)
            order = rng.permutation(shard_count)
            assignment = np.empty(total, dtype=int)
            for pos, shard_id in enumerate(order):
                assignment[shards[shard_id]] = pos // shards_per_worker
        elif scheme == 'dirichlet':
            assignment = _dirichlet_assignment(labels, n, beta, rng)
        else:
            raise ValueError(f'unknown partition scheme {scheme!r}')

        if np.all(np.bincount(assignment, minlength=n) > 0):
            return Partition(scheme=scheme, assignment=assignment, n=n)
        logger.debug('%s partition left a worker empty, resampling (attempt %d)', scheme, attempt + 1)
    raise PartitionError(f'{scheme} partition left a worker empty after {PARTITION_RESAMPLES} attempts')
