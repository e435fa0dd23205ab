import numpy as np
import pytest

from conftest import ring_weights
from ngosim.errors import IncompleteTraceError, ScheduleError, StabilityWarning
from ngosim.models import (Compressor, Delayed, LocalObjective, ProblemConstants, RandomGraph, RunRecord, Schedule,
                           Switching)
from ngosim.services.graph import (build_topology, laplacian, metropolis_weights, nonlinear_weight_matrix,
                                   spectral_summary)
from ngosim.services.objective import make_quadratic, problem_constants, quadratic_from_centers, solve_optimum
from ngosim.services.optimize import (check_schedule, descent_residuals, evaluate_bound, make_schedule,
                                     mixing_beta, run_centralized, run_compressed_ngo, run_gossip_sgd,
                                     run_local_sgd, run_ngo_sgd, sync_parameter, sync_parameter_at,
                                     weighted_average_iterate)


def _heterogeneous(seed, n=10, d=1, batch=None):
    return make_quadratic(n, d, 50, seed, heterogeneity=0.5, batch=batch)


def _lambda2_B(W, p):
    return spectral_summary(laplacian(nonlinear_weight_matrix(W, p))).lambda2


def _rows(records):
    return [r.csv_row() for r in records]


# Schedules

def test_weight_sum_closed_form():
    schedule = Schedule(a=20, mu=1.0)
    assert schedule.weight_sum(10) == 6085
    assert schedule.weights(10).sum() == 6085


@pytest.mark.parametrize('a', [1, 16, 300])
@pytest.mark.parametrize('T', [1, 10, 1000])
def test_weight_sum_grows_cubically(a, T):
    assert Schedule(a=a, mu=0.5).weight_sum(T) >= T ** 3 / 3


def test_default_schedule_respects_step_cap():
    constants = ProblemConstants(mu=0.2, L=3.0)
    schedule = make_schedule(constants, beta=0.9)
    for t in (0, 1, 100):
        assert schedule.eta(t) <= 1 / (4 * constants.L) + 1e-15
    assert check_schedule(schedule, 'ngo', constants.mu, constants.L, beta=0.9, strict=True)


def test_schedule_check_strict_and_lenient():
    schedule = Schedule(a=1.0, mu=1.0)
    with pytest.raises(ScheduleError):
        check_schedule(schedule, 'gossip', 1.0, 2.0, strict=True)
    with pytest.warns(StabilityWarning):
        assert not check_schedule(schedule, 'gossip', 1.0, 2.0, strict=False)


def test_weighted_average_of_constant_trajectory():
    schedule = Schedule(a=20, mu=1.0)
    traj = np.tile([1.5, -2.0], (10, 1))
    np.testing.assert_allclose(weighted_average_iterate(traj, schedule, 10), [1.5, -2.0])


# Training runs

def test_centralized_reaches_the_optimum():
    objs = quadratic_from_centers([0.0, 3.0, 6.0])
    schedule = make_schedule(problem_constants(objs))
    records = run_centralized(objs, schedule, 500, seed=0)
    assert len(records) == 500
    assert records[-1].loss_gap_mean <= 1e-10
    assert all(r.V == 0.0 for r in records)


def test_gossip_on_complete_graph_with_full_mixing_is_centralized():
    objs, constants = make_quadratic(4, 2, 20, seed=0, heterogeneity=0.5)
    W = metropolis_weights(build_topology('complete', 4))
    schedule = make_schedule(constants)
    central = run_centralized(objs, schedule, 200, seed=0)
    with pytest.warns(StabilityWarning):
        gossip = run_gossip_sgd(objs, W, schedule, 1.0, 200, seed=0)
    for a, b in zip(central, gossip):
        np.testing.assert_allclose(a.mean_state, b.mean_state, rtol=0, atol=1e-10)


def test_no_mixing_lets_heterogeneous_workers_drift(ring10_w):
    objs, constants = _heterogeneous(0)
    records = run_gossip_sgd(objs, ring10_w, make_schedule(constants), 0.0, 300, seed=0)
    assert records[0].V == 0.0
    assert records[-1].V > 0.0


def test_identical_workers_stay_synchronized(ring10_w):
    objs, _ = _heterogeneous(0)
    clones = [objs[0]] * 10
    constants = problem_constants(clones)
    records = run_ngo_sgd(clones, ring10_w, make_schedule(constants, beta=mixing_beta(ring10_w, 0.05)),
                          0.05, 0.6, 300, seed=0)
    assert max(r.V for r in records) <= 1e-20


@pytest.mark.parametrize('seed', range(3))
def test_ngo_with_linear_coupling_is_gossip(seed, ring10_w):
    objs, constants = _heterogeneous(seed, batch=5)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    gossip = run_gossip_sgd(objs, ring10_w, schedule, 0.05, 200, seed, batch=5)
    ngo = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 1.0, 200, seed, batch=5)
    assert _rows(gossip) == _rows(ngo)
    for a, b in zip(gossip, ngo):
        np.testing.assert_array_equal(a.mean_state, b.mean_state)


@pytest.mark.parametrize('seed', range(3))
def test_local_sgd_with_period_one_is_gossip(seed, ring10_w):
    objs, constants = _heterogeneous(seed, batch=5)
    schedule = make_schedule(constants)
    gossip = run_gossip_sgd(objs, ring10_w, schedule, 0.05, 200, seed, batch=5)
    local = run_local_sgd(objs, ring10_w, schedule, 0.05, 1, 200, seed, batch=5)
    assert _rows(gossip) == _rows(local)


def test_local_sgd_that_never_communicates_is_unmixed(ring10_w):
    objs, constants = _heterogeneous(1)
    schedule = make_schedule(constants)
    T = 100
    local = run_local_sgd(objs, ring10_w, schedule, 0.05, T + 1, T, seed=1)
    unmixed = run_gossip_sgd(objs, ring10_w, schedule, 0.0, T, seed=1)
    assert all(r.comm_rounds == 0 for r in local)
    for a, b in zip(local, unmixed):
        assert a.V == b.V
        np.testing.assert_array_equal(a.mean_state, b.mean_state)


def test_identity_compression_follows_ngo(ring10_w):
    objs, constants = _heterogeneous(2, d=3)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    plain, compressed = [], []
    run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, 50, seed=2,
                hook=lambda t, src: plain.append(src))
    run_compressed_ngo(objs, ring10_w, schedule, 0.05, 0.6, 50, Compressor('identity'), seed=2,
                       hook=lambda t, src: compressed.append(src))
    assert len(plain) == len(compressed) == 49
    for a, b in zip(plain, compressed):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_zero_budget_compression_never_mixes(ring10_w):
    objs, constants = _heterogeneous(3, d=2)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    silent = run_compressed_ngo(objs, ring10_w, schedule, 0.05, 0.6, 80, Compressor('top_k', k=0), seed=3)
    unmixed = run_gossip_sgd(objs, ring10_w, schedule, 0.0, 80, seed=3)
    assert silent[-1].bits_sent == 0
    for a, b in zip(silent, unmixed):
        np.testing.assert_array_equal(a.mean_state, b.mean_state)


def test_top_k_compression_is_competitive(ring10_w):
    centers = np.random.default_rng(4).standard_normal((10, 4)) * 3
    objs = quadratic_from_centers(centers)
    constants = problem_constants(objs)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    T = 5000
    full = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, T, seed=4)
    sparse = run_compressed_ngo(objs, ring10_w, schedule, 0.05, 0.6, T, Compressor('top_k', k=2), seed=4)
    assert sparse[-1].loss_gap_avg <= 2 * full[-1].loss_gap_avg + 1e-15
    assert sparse[-1].bits_sent == sparse[-1].comm_rounds * 10 * 2 * 96


def test_pre_step_mixing_differs_but_stays_finite(ring10_w):
    objs, constants = _heterogeneous(5)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    half = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, 200, seed=5)
    pre = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, 200, seed=5, mix_on='pre_step')
    assert _rows(half) != _rows(pre)
    assert np.isfinite(pre[-1].loss_gap_avg)


def test_delayed_training_runs(ring10_w):
    objs, constants = _heterogeneous(6)
    records = run_gossip_sgd(objs, ring10_w, make_schedule(constants), 0.05, 200, seed=6, comm=Delayed(2))
    assert len(records) == 200
    assert np.isfinite(records[-1].V)


def test_compressed_mixing_with_zero_delay_is_synchronous(ring10_w):
    objs, constants = _heterogeneous(6, d=2)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    compressor = Compressor('top_k', k=1)
    plain = run_compressed_ngo(objs, ring10_w, schedule, 0.05, 0.6, 200, compressor, seed=6)
    fresh = run_compressed_ngo(objs, ring10_w, schedule, 0.05, 0.6, 200, compressor, seed=6, comm=Delayed(0))
    stale = run_compressed_ngo(objs, ring10_w, schedule, 0.05, 0.6, 200, compressor, seed=6, comm=Delayed(3))
    assert _rows(fresh) == _rows(plain)
    assert _rows(stale) != _rows(plain)
    assert np.isfinite(stale[-1].loss_gap_avg)


def test_random_graph_training():
    W = metropolis_weights(build_topology('complete', 10))
    objs, constants = _heterogeneous(8)
    schedule = make_schedule(constants, beta=mixing_beta(W, 0.05))
    x0 = 3.0 * np.random.default_rng(8).standard_normal((10, 1))
    comm = RandomGraph(u=0.5, seed=1)
    first = run_ngo_sgd(objs, W, schedule, 0.05, 0.6, 500, seed=8, comm=comm, x0=x0)
    again = run_ngo_sgd(objs, W, schedule, 0.05, 0.6, 500, seed=8, comm=comm, x0=x0)
    sync = run_ngo_sgd(objs, W, schedule, 0.05, 0.6, 500, seed=8, x0=x0)
    assert _rows(first) == _rows(again)
    assert _rows(first) != _rows(sync)
    assert first[-1].loss_gap_avg < first[0].loss_gap_mean


def test_switching_graphs_mix_faster_than_the_ring_alone(ring10_w):
    complete = metropolis_weights(build_topology('complete', 10))
    objs, constants = _heterogeneous(9)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    comm = Switching(weights=(ring10_w, complete), period=2)
    switching = run_gossip_sgd(objs, ring10_w, schedule, 0.05, 1000, seed=9, comm=comm)
    ring = run_gossip_sgd(objs, ring10_w, schedule, 0.05, 1000, seed=9)
    assert _rows(switching) != _rows(ring)
    assert np.mean([r.V for r in switching[200:]]) < np.mean([r.V for r in ring[200:]])


def test_sync_threshold_forces_extra_rounds():
    W = metropolis_weights(build_topology('complete', 4))
    objs, constants = make_quadratic(4, 1, 30, seed=7, heterogeneity=0.5)
    records = run_gossip_sgd(objs, W, make_schedule(constants), 0.3, 100, seed=7, sync_threshold=1e-8)
    assert all(r.V <= 1e-8 for r in records[1:])
    assert records[-1].comm_rounds > 99


def test_nonlinear_gossip_reduces_disagreement(ring10_w):
    better_sync, better_gap = 0, 0
    for seed in range(20):
        objs, constants = _heterogeneous(seed)
        schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
        gossip = run_gossip_sgd(objs, ring10_w, schedule, 0.05, 2000, seed)
        ngo = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, 2000, seed)
        if np.mean([r.V for r in ngo[50:]]) <= np.mean([r.V for r in gossip[50:]]):
            better_sync += 1
        if ngo[-1].loss_gap_avg <= gossip[-1].loss_gap_avg:
            better_gap += 1
    assert better_sync >= 18
    assert better_gap >= 15


def test_less_frequent_communication_hurts(ring10_w):
    gaps = {}
    for H in (1, 2, 5):
        finals = []
        for seed in range(10):
            objs, constants = _heterogeneous(seed)
            records = run_local_sgd(objs, ring10_w, make_schedule(constants), 0.05, H, 2000, seed)
            finals.append(records[-1].loss_gap_avg)
        gaps[H] = np.mean(finals)
    assert gaps[1] < gaps[2] < gaps[5]


# Bounds

@pytest.fixture(scope='module')
def bound_runs():
    W = ring_weights(10)
    rng = np.random.default_rng(12)
    objs = quadratic_from_centers(rng.standard_normal((10, 2)) * 3)
    constants = problem_constants(objs)
    schedule = make_schedule(constants, beta=mixing_beta(W, 0.05))
    x0 = rng.standard_normal((10, 2)) * 2
    T = 10_000
    runs = {
        'centralized': run_centralized(objs, schedule, T, seed=0, x0=x0),
        'gossip': run_gossip_sgd(objs, W, schedule, 0.05, T, seed=0, x0=x0),
        'ngo': run_ngo_sgd(objs, W, schedule, 0.05, 0.6, T, seed=0, x0=x0),
    }
    x_star, _ = solve_optimum(objs)
    return W, constants, schedule, x_star, runs


@pytest.mark.parametrize('variant', ['centralized', 'gossip', 'ngo'])
@pytest.mark.parametrize('T', [100, 1000, 10_000])
def test_bound_holds(variant, T, bound_runs):
    W, constants, schedule, x_star, runs = bound_runs
    records = runs[variant]
    report = evaluate_bound(records, constants, schedule, variant, x_bar0=records[0].mean_state,
                            x_star=x_star, n=10, T=T, gamma=0.05, p=0.6, lambda2B=_lambda2_B(W, 0.6))
    assert report.holds
    assert report.term_variance == 0.0
    if variant == 'centralized':
        assert report.term_sync == 0.0
    if variant == 'ngo':
        assert report.sync_cutoff <= T - 1


@pytest.mark.parametrize('variant', ['centralized', 'gossip', 'ngo'])
def test_descent_inequality(variant, bound_runs):
    _, constants, schedule, x_star, runs = bound_runs
    for lhs, rhs in descent_residuals(runs[variant][:2000], constants, schedule, x_star, 10):
        assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


@pytest.mark.parametrize('seed', range(5))
def test_ngo_bound_holds_from_identical_starts(seed, ring10_w):
    objs, constants = _heterogeneous(seed)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    records = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, 2000, seed)
    assert records[0].V == 0.0
    x_star, _ = solve_optimum(objs)
    for T in (100, 1000, 2000):
        report = evaluate_bound(records, constants, schedule, 'ngo', x_bar0=records[0].mean_state,
                                x_star=x_star, n=10, T=T, gamma=0.05, p=0.6,
                                lambda2B=_lambda2_B(ring10_w, 0.6))
        assert report.term_sync > 0.0
        assert report.holds


def test_descent_residual_hand_example():
    constants = ProblemConstants(mu=1.0, L=2.0)
    schedule = Schedule(a=16, mu=1.0)
    records = [RunRecord(t=0, V=4.0, loss_gap_mean=0.5, loss_gap_avg=0.5, comm_rounds=0, bits_sent=0,
                         mean_state=np.array([1.0])),
               RunRecord(t=1, V=1.0, loss_gap_mean=0.1, loss_gap_avg=0.3, comm_rounds=1, bits_sent=0,
                         mean_state=np.array([0.5]))]
    # eta = 1/4: (1 - 1/8) * 1 - 0 + 1/4 * (2/4 * 4 + 2/4 + 1) * 4 / 2
    [(lhs, rhs)] = descent_residuals(records, constants, schedule, [0.0], 2)
    assert lhs == pytest.approx(0.25)
    assert rhs == pytest.approx(2.625)


@pytest.mark.parametrize('variant', ['gossip', 'ngo'])
def test_descent_inequality_on_noiseless_least_squares(variant, ring10_w):
    objs, constants = make_quadratic(10, 2, 50, 3, heterogeneity=0.5, noise=0.0)
    schedule = make_schedule(constants, beta=mixing_beta(ring10_w, 0.05))
    if variant == 'gossip':
        records = run_gossip_sgd(objs, ring10_w, schedule, 0.05, 2000, seed=3)
    else:
        records = run_ngo_sgd(objs, ring10_w, schedule, 0.05, 0.6, 2000, seed=3)
    x_star, _ = solve_optimum(objs)
    for lhs, rhs in descent_residuals(records, constants, schedule, x_star, 10):
        assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


def test_synchronized_trace_gives_equal_gossip_and_ngo_bounds():
    objs = quadratic_from_centers([[0.0], [1.0], [2.0], [3.0]])
    constants = problem_constants(objs)
    schedule = make_schedule(constants, beta=0.5)
    records = run_centralized(objs, schedule, 50, seed=0)
    x_star, _ = solve_optimum(objs)
    kw = dict(x_bar0=records[0].mean_state, x_star=x_star, n=4, gamma=0.05, p=0.6, lambda2B=0.1)
    gossip = evaluate_bound(records, constants, schedule, 'gossip', **kw)
    ngo = evaluate_bound(records, constants, schedule, 'ngo', **kw)
    assert gossip.total == ngo.total
    assert ngo.sync_cutoff == 0


def test_bound_needs_complete_trace():
    constants = ProblemConstants(mu=1.0, L=1.0)
    schedule = Schedule(a=16, mu=1.0)
    records = [RunRecord(t=0, V=None, loss_gap_mean=0.0, loss_gap_avg=0.0, comm_rounds=0, bits_sent=0)]
    with pytest.raises(IncompleteTraceError):
        evaluate_bound(records, constants, schedule, 'gossip', x_bar0=[0.0], x_star=[0.0], n=1)
    with pytest.raises(IncompleteTraceError):
        evaluate_bound(records, constants, schedule, 'centralized', x_bar0=[0.0], x_star=[0.0], n=1, T=5)


# Synchronization parameter

def test_sync_parameter_of_synchronized_workers_is_the_cap():
    objs = quadratic_from_centers([0.0, 2.0])
    states = [[1.0], [1.0]]
    assert sync_parameter_at(objs, states, 0.01) == pytest.approx(10.0)
    schedule = Schedule(a=16, mu=1.0)
    caps = [sync_parameter_at(objs, states, schedule.eta(t)) for t in (0, 10, 100)]
    assert caps == sorted(caps)


def test_sync_parameter_hand_example():
    objs = [LocalObjective(kind='quadratic', A=[[2.0]], b=[0.0]),
            LocalObjective(kind='quadratic', A=[[1.0]], b=[2.0])]
    assert sync_parameter_at(objs, [[1.0], [0.0]], 0.01) == pytest.approx(1 / 3, abs=1e-12)


def test_sync_parameter_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        sync_parameter([[1.0]], [[0.5]], 0.1, epsilon=1.0)
