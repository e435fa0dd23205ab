import itertools
import math

import numpy as np
import pytest

from ngosim.errors import (AsymmetricMatrixError, InvalidEdgeError, InvalidExponentError,
                           InvalidSizeError, NotConnectedError)
from ngosim.models import WeightMatrix
from ngosim.services.graph import (adjacency_matrix, build_topology, dump_topology, jacobi_eigenvalues,
                                   laplacian, load_topology, metropolis_weights, nonlinear_weight_matrix,
                                   spectral_summary, stable_rate, unweighted_laplacian)


def _horner(coeffs, x):
    acc = 0
    for c in coeffs:
        acc = acc * x + c
    return acc


def _deflate(coeffs, root):
    out = [coeffs[0]]
    for c in coeffs[1:-1]:
        out.append(c + out[-1] * root)
    return out


def _quadratic_roots(b, c):
    disc = b * b - 4 * c
    if disc == 0:
        return [-b / 2.0, -b / 2.0]
    s = math.sqrt(disc)
    if b == 0:
        return [-s / 2.0, s / 2.0]
    q = -0.5 * (b + math.copysign(s, b))
    return [q, c / q]


def char_poly_roots(a):
    """Eigenvalues of a small integer symmetric matrix from its characteristic polynomial."""
    a = [[int(v) for v in row] for row in a]
    if len(a) == 2:
        coeffs = [1, -(a[0][0] + a[1][1]), a[0][0] * a[1][1] - a[0][1] * a[1][0]]
    else:
        trace = a[0][0] + a[1][1] + a[2][2]
        minors = (a[0][0] * a[1][1] - a[0][1] * a[1][0]
                  + a[0][0] * a[2][2] - a[0][2] * a[2][0]
                  + a[1][1] * a[2][2] - a[1][2] * a[2][1])
        det = (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
               - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
               + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))
        coeffs = [1, -trace, minors, -det]

    roots = []
    # repeated roots of an integer polynomial are integers; peel those off exactly
    while len(coeffs) > 3:
        found = next((r for r in range(-12, 13) if _horner(coeffs, r) == 0), None)
        if found is None:
            break
        roots.append(float(found))
        coeffs = _deflate(coeffs, found)
    if len(coeffs) == 4:
        for r in np.roots(coeffs).real:
            for _ in range(3):
                f = _horner(coeffs, r)
                df = 3 * r * r + 2 * coeffs[1] * r + coeffs[2]
                if df != 0:
                    r = r - f / df
            roots.append(float(r))
    else:
        roots.extend(_quadratic_roots(coeffs[1], coeffs[2]))
    return np.sort(roots)


def _symmetric_matrices(size, values):
    slots = [(i, j) for i in range(size) for j in range(i, size)]
    for combo in itertools.product(values, repeat=len(slots)):
        a = np.zeros((size, size))
        for (i, j), v in zip(slots, combo):
            a[i, j] = a[j, i] = v
        yield a


def test_ring_and_complete_edges(ring4):
    assert ring4.edges == {(0, 1), (1, 2), (2, 3), (0, 3)}
    assert ring4.degrees == (2, 2, 2, 2)
    assert build_topology('complete', 3).edges == {(0, 1), (0, 2), (1, 2)}
    assert build_topology('ring', 2).edges == {(0, 1)}


def test_erdos_renyi_with_certain_edges_is_complete():
    topo = build_topology('erdos_renyi', 5, u=1.0, seed=3)
    assert len(topo.edges) == 10


def test_erdos_renyi_draw_is_seeded():
    a = build_topology('erdos_renyi', 12, u=0.3, seed=7)
    b = build_topology('erdos_renyi', 12, u=0.3, seed=7)
    assert a.edges == b.edges
    assert a.is_connected


@pytest.mark.parametrize('kind,n,edges,error', [
    ('ring', 1, None, InvalidSizeError),
    ('custom', 3, [(0, 3)], InvalidEdgeError),
    ('custom', 3, [(1, 1)], InvalidEdgeError),
    ('custom', 3, [(0, 1), (1, 0)], InvalidEdgeError),
])
def test_invalid_topologies(kind, n, edges, error):
    with pytest.raises(error):
        build_topology(kind, n, edges=edges)


def test_metropolis_two_nodes_is_exact():
    W = metropolis_weights(build_topology('ring', 2))
    np.testing.assert_array_equal(W.entries, [[0.5, 0.5], [0.5, 0.5]])


def test_metropolis_ring4(ring4):
    W = metropolis_weights(ring4)
    assert W.entries[0, 1] == pytest.approx(1 / 3)
    assert W.entries[0, 0] == pytest.approx(1 / 3)
    assert W.entries[0, 2] == 0.0


def test_metropolis_complete3():
    W = metropolis_weights(build_topology('complete', 3))
    np.testing.assert_allclose(W.entries, np.full((3, 3), 1 / 3))


def test_metropolis_rejects_disconnected():
    topo = build_topology('custom', 4, edges=[(0, 1), (2, 3)])
    with pytest.raises(NotConnectedError):
        metropolis_weights(topo)


@pytest.mark.parametrize('seed', range(20))
def test_metropolis_is_symmetric_and_stochastic(seed):
    topo = build_topology('erdos_renyi', 9, u=0.4, seed=seed)
    w = metropolis_weights(topo).entries
    assert np.array_equal(w, w.T)
    assert np.max(np.abs(w.sum(axis=1) - 1.0)) < 1e-12
    assert w.min() >= 0.0


def test_weight_matrix_rejects_asymmetry():
    with pytest.raises(AsymmetricMatrixError):
        WeightMatrix(entries=np.array([[0.5, 0.5], [0.4, 0.6]]))


def test_weight_matrix_rejects_weight_off_the_graph(ring4):
    w = np.full((4, 4), 0.25)
    with pytest.raises(InvalidEdgeError):
        WeightMatrix(entries=w, topology=ring4)


def test_laplacian_of_two_nodes():
    W = metropolis_weights(build_topology('ring', 2))
    np.testing.assert_allclose(laplacian(W), [[0.5, -0.5], [-0.5, 0.5]])


def test_laplacian_rows_sum_to_zero(ring4):
    lap = laplacian(metropolis_weights(ring4))
    np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-15)
    assert lap[0, 0] == pytest.approx(2 / 3)
    assert lap[0, 1] == pytest.approx(-1 / 3)


def test_spectral_summary_ring4(ring4):
    summary = spectral_summary(laplacian(metropolis_weights(ring4)), ring4)
    np.testing.assert_allclose(summary.eigenvalues, [0.0, 2 / 3, 2 / 3, 4 / 3], atol=1e-10)
    assert summary.lambda2 == pytest.approx(2 / 3, abs=1e-10)
    assert summary.lambda_n == pytest.approx(4 / 3, abs=1e-10)
    assert summary.max_degree == 2
    assert summary.connected


def test_spectral_summary_complete3_unweighted():
    topo = build_topology('complete', 3)
    summary = spectral_summary(unweighted_laplacian(topo), topo)
    np.testing.assert_allclose(summary.eigenvalues, [0.0, 3.0, 3.0], atol=1e-10)


def test_spectral_summary_rejects_asymmetric():
    with pytest.raises(AsymmetricMatrixError):
        spectral_summary(np.array([[1.0, -1.0], [0.0, 0.0]]))


@pytest.mark.parametrize('seed', range(100))
def test_lambda2_positive_iff_connected(seed):
    topo = build_topology('erdos_renyi', 8, u=0.3, seed=seed, require_connected=False)
    summary = spectral_summary(unweighted_laplacian(topo), topo)
    assert summary.connected == topo.is_connected
    assert summary.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)


def test_spectrum_trace_matches_laplacian_trace():
    topo = build_topology('erdos_renyi', 10, u=0.4, seed=2)
    lap = laplacian(metropolis_weights(topo))
    assert sum(spectral_summary(lap).eigenvalues) == pytest.approx(np.trace(lap), abs=1e-10)


def test_ring_gap_shrinks_with_size():
    small = spectral_summary(laplacian(metropolis_weights(build_topology('ring', 4)))).lambda2
    large = spectral_summary(laplacian(metropolis_weights(build_topology('ring', 16)))).lambda2
    assert large < small


def test_nonlinear_weights_ring4(ring4):
    W = metropolis_weights(ring4)
    B = nonlinear_weight_matrix(W, 0.5)
    assert B[0, 1] == pytest.approx(1 / 9)
    assert B[0, 2] == 0.0
    assert spectral_summary(laplacian(B)).lambda2 == pytest.approx(2 / 9, abs=1e-10)


def test_nonlinear_weights_at_p1_is_w(ring4):
    W = metropolis_weights(ring4)
    np.testing.assert_array_equal(nonlinear_weight_matrix(W, 1.0), W.entries)


def test_nonlinear_weights_reject_small_exponent(ring4):
    with pytest.raises(InvalidExponentError):
        nonlinear_weight_matrix(metropolis_weights(ring4), 0.4)


def test_stable_rate(ring4):
    summary = spectral_summary(laplacian(metropolis_weights(ring4)), ring4)
    assert stable_rate(0.4, summary)
    assert not stable_rate(0.5, summary)


def test_jacobi_matches_all_small_integer_matrices():
    matrices = itertools.chain(
        _symmetric_matrices(2, (-1, 0, 1)),
        _symmetric_matrices(3, (-1, 0, 1)),
        _symmetric_matrices(3, (-2, -1, 0, 1, 2)),
    )
    for a in matrices:
        np.testing.assert_allclose(jacobi_eigenvalues(a), char_poly_roots(a), rtol=0, atol=1e-9,
                                   err_msg=str(a))


def test_jacobi_on_larger_random_matrix():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((8, 8))
    a = m + m.T
    np.testing.assert_allclose(jacobi_eigenvalues(a), np.linalg.eigvalsh(a), atol=1e-9)


def test_adjacency_matrix(ring4):
    a = adjacency_matrix(ring4)
    assert a.sum() == 8
    assert a[0, 3] == a[3, 0] == 1.0


def test_topology_file_round_trip(tmp_path):
    topo = build_topology('erdos_renyi', 7, u=0.5, seed=4)
    path = tmp_path / 'graph.txt'
    dump_topology(topo, path)
    assert load_topology(path) == topo


def test_topology_file_reports_bad_line(tmp_path):
    path = tmp_path / 'graph.txt'
    path.write_text('n 3\n0 1\n1 x\n')
    with pytest.raises(InvalidEdgeError, match=':3:'):
        load_topology(path)
