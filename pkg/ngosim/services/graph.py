import logging

import networkx as nx
import numpy as np

from ngosim.errors import (AsymmetricMatrixError, InvalidEdgeError, InvalidSizeError,
                           NotConnectedError, ShapeError)
from ngosim.models import SpectralSummary, Topology, WeightMatrix, check_exponent
from ngosim.utils import TAG_EDGES, rng_stream

logger = logging.getLogger(__name__)

TOPOLOGY_KINDS = ('ring', 'complete', 'erdos_renyi', 'custom')
MAX_RESAMPLES = 1000


def _from_networkx(graph, n):
    return Topology(n=n, edges=frozenset((min(i, j), max(i, j)) for i, j in graph.edges()))


def build_topology(kind, n, u=None, seed=0, edges=None, require_connected=True):
    """
    Build a worker graph.

    erdos_renyi draws are resampled (up to MAX_RESAMPLES times) until connected
    unless `require_connected` is False.
    """
    if n < 2:
        raise InvalidSizeError(f'need at least 2 workers, got {n}')
    if kind == 'ring':
        return _from_networkx(nx.cycle_graph(n), n)
    if kind == 'complete':
        return _from_networkx(nx.complete_graph(n), n)
    if kind == 'erdos_renyi':
        if u is None or not 0.0 < u <= 1.0:
            raise ValueError(f'erdos_renyi needs u in (0, 1], got {u}')
        for attempt in range(MAX_RESAMPLES):
            draw_seed = int(rng_stream(seed, TAG_EDGES, attempt).integers(2**31 - 1))
            graph = nx.gnp_random_graph(n, u, seed=draw_seed)
            if not require_connected or nx.is_connected(graph):
                if attempt:
                    logger.debug('erdos_renyi n=%d u=%s connected after %d resamples', n, u, attempt)
                return _from_networkx(graph, n)
        raise NotConnectedError(f'no connected G({n}, {u}) draw in {MAX_RESAMPLES} attempts')
    if kind == 'custom':
        if edges is None:
            raise InvalidEdgeError('custom topology needs an edge list')
        seen = set()
        for i, j in edges:
            key = (min(int(i), int(j)), max(int(i), int(j)))
            if key in seen:
                raise InvalidEdgeError(f'duplicate edge ({i}, {j})')
            seen.add(key)
        return Topology(n=n, edges=frozenset(edges))
    raise ValueError(f'unknown topology kind {kind!r}; expected one of {TOPOLOGY_KINDS}')


def metropolis_weights(topo):
    if not topo.is_connected:
        raise NotConnectedError('metropolis weights need a connected topology')
    deg = topo.degrees
    w = np.zeros((topo.n, topo.n))
    for i, j in topo.edges:
        w[i, j] = w[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    for i in range(topo.n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return WeightMatrix(entries=w, topology=topo)


def adjacency_matrix(topo):
    a = np.zeros((topo.n, topo.n))
    for i, j in topo.edges:
        a[i, j] = a[j, i] = 1.0
    return a


def laplacian(W):
    """L = D - W with D_ii the full row sum (so L = I - W for stochastic W)."""
    w = W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    return np.diag(w.sum(axis=1)) - w


def unweighted_laplacian(topo):
    return laplacian(adjacency_matrix(topo))


def jacobi_eigenvalues(matrix, tol=1e-12, max_sweeps=100):
    """
    Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Sweeps stop once the off-diagonal Frobenius norm drops below tol * ||A||_F.
    """
    a = np.array(matrix, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f'expected a square matrix, got shape {a.shape}')
    n = a.shape[0]
    scale = np.linalg.norm(a)
    if n == 1 or scale == 0.0:
        return np.sort(np.diag(a))

    for sweep in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0 else -1.0
                t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
    else:
        logger.warning('jacobi did not converge in %d sweeps (n=%d)', max_sweeps, n)
    return np.sort(np.diag(a))


def spectral_summary(L, topo=None):
    lap = np.asarray(L, dtype=float)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise ShapeError(f'expected a square matrix, got shape {lap.shape}')
    if np.max(np.abs(lap - lap.T)) > 1e-10:
        raise AsymmetricMatrixError('laplacian is not symmetric')
    eigs = jacobi_eigenvalues(lap)
    if topo is not None:
        max_degree = topo.max_degree
    else:
        off = lap.copy()
        np.fill_diagonal(off, 0.0)
        max_degree = int((off != 0).sum(axis=1).max())
    return SpectralSummary(
        eigenvalues=tuple(float(e) for e in eigs),
        lambda2=float(eigs[1]),
        lambda_n=float(eigs[-1]),
        max_degree=max_degree,
    )


def nonlinear_weight_matrix(W, p):
    """B_ij = W_ij^(1/p). p = 1 gives B = W and is meant for diagnostics."""
    check_exponent(p)
    w = W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    b = np.zeros_like(w)
    positive = w > 0
    b[positive] = w[positive] ** (1.0 / p)
    return b


def stable_rate(gamma, spectral):
    """Discrete-time stability predicate gamma < 1/Delta."""
    max_degree = spectral.max_degree if isinstance(spectral, SpectralSummary) else int(spectral)
    return gamma * max_degree < 1.0


def dump_topology(topo, path):
    with open(path, 'w') as fh:
        fh.write(f'n {topo.n}\n')
        for i, j in sorted(topo.edges):
            fh.write(f'{i} {j}\n')


def load_topology(path):
    with open(path) as fh:
        lines = [(no, line.strip()) for no, line in enumerate(fh, start=1)]
    lines = [(no, line) for no, line in lines if line and not line.startswith('#')]
    if not lines:
        raise InvalidEdgeError(f'{path}: empty topology file')
    no, header = lines[0]
    parts = header.split()
    if len(parts) != 2 or parts[0] != 'n' or not parts[1].isdigit():
        raise InvalidEdgeError(f'{path}:{no}: expected "n <count>", got {header!r}')
    n = int(parts[1])
    edges = []
    for no, line in lines[1:]:
        parts = line.split()
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            raise InvalidEdgeError(f'{path}:{no}: expected "i j", got {line!r}')
        edges.append((int(parts[0]), int(parts[1])))
    return build_topology('custom', n, edges=edges)
