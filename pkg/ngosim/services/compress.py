import logging

import numpy as np

from ngosim.errors import InvalidKError
from ngosim.models import Payload
from ngosim.utils import TAG_COMPRESS, rng_stream

logger = logging.getLogger(__name__)


def _select(c, x, round_index, worker):
    d = len(x)
    if c.kind == 'identity':
        return np.arange(d)
    if c.k > d:
        raise InvalidKError(f'k={c.k} exceeds dimension {d}')
    if c.kind == 'top_k':
        # stable sort keeps the lower index first among equal magnitudes
        order = np.argsort(-np.abs(x), kind='stable')
        return np.sort(order[:c.k])
    rng = rng_stream(c.seed, TAG_COMPRESS, round_index, worker)
    return np.sort(rng.choice(d, size=c.k, replace=False))


def compress(c, x, round_index=0, worker=0):
    """Sparsify x; returns the payload that goes on the wire and its dense reconstruction."""
    x = np.asarray(x, dtype=float)
    idx = _select(c, x, round_index, worker)
    payload = Payload(indices=idx, values=x[idx].copy(), d=len(x))
    return payload, payload.to_dense()


def verify_contraction(c, d, trials=10_000, seed=0):
    """
    Check E||Q(x) - x||^2 <= alpha ||x||^2 on standard normal draws.

    top_k must hold on every draw (the worst ratio is returned); random_k is judged
    on the mean ratio with a 3/sqrt(trials) allowance.
    """
    if trials < 100:
        raise ValueError('need at least 100 trials')
    alpha = c.alpha_bound(d)
    rng = rng_stream(seed, TAG_COMPRESS)
    ratios = np.empty(trials)
    for trial in range(trials):
        x = rng.standard_normal(d)
        _, q = compress(c, x, round_index=trial)
        ratios[trial] = float((q - x) @ (q - x)) / float(x @ x)
    if c.kind == 'random_k':
        observed = float(ratios.mean())
        passed = observed <= alpha + 3.0 / np.sqrt(trials)
    else:
        observed = float(ratios.max())
        passed = observed <= alpha + 1e-12
    logger.info('%s k=%s d=%d: observed alpha %.4f vs claimed %.4f (%s)',
                c.kind, c.k, d, observed, alpha, 'ok' if passed else 'FAILED')
    return observed, passed
