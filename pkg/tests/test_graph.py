import numpy as np
import pytest

import dpgames as dp
from dpgames.graph import DelayRangeError, DiagnosticsError, ScheduleError

from conftest import complete_graph, ring_graph


def test_weights_in_neighborhood_of_two():
    # in-neighborhood {i, j} -> both weighted 1/2
    sched = dp.GraphSchedule.static(3, [(1, 0), (2, 2)], require_self_loops=True)
    W = sched.weights_at(0)
    assert W[0, 0] == 0.5 and W[0, 1] == 0.5
    assert W[0, 2] == 0.0


def test_weights_self_loop_only():
    sched = dp.GraphSchedule.static(2, [(0, 1)])
    W = sched.weights_at(5)
    # agent 0 hears only itself
    assert W[0].tolist() == [1.0, 0.0]


def test_benchmark_unreliable_edge_absent_at_odd_t():
    from dpgames.cli import benchmark_graph
    sched = benchmark_graph()
    assert sched.weights_at(0)[3, 1] > 0
    assert sched.weights_at(1)[3, 1] == 0.0
    assert sched.weights_at(2)[3, 1] > 0


def test_empty_in_neighborhood_is_an_error():
    sched = dp.GraphSchedule.static(2, [(0, 1)], require_self_loops=False)
    with pytest.raises(ScheduleError):
        sched.weights_at(0)  # agent 0 has no in-edges at all


def test_row_stochastic_and_self_loop_floor():
    from dpgames.cli import benchmark_graph
    sched = benchmark_graph()
    for t in range(64):
        W = sched.weights_at(t)
        assert np.abs(W.sum(axis=1) - 1.0).max() <= 1e-12
        assert W.min() >= 0.0 and W.max() <= 1.0
        assert np.diag(W).min() >= 1.0 / sched.num_agents


def test_b_connectivity_static_ring():
    assert dp.validate_b_connectivity(ring_graph(5), 1, 50).ok


def test_b_connectivity_alternating_two_agents():
    # {0->1} at even t, {1->0} at odd t, plus self-loops
    sched = dp.GraphSchedule.periodic(2, [[(0, 1)], [(1, 0)]])
    assert dp.validate_b_connectivity(sched, 2, 40).ok
    rep = dp.validate_b_connectivity(sched, 1, 40)
    assert not rep.ok
    assert rep.first_violation == (0, 0)


def test_b_connectivity_disconnected_pair():
    sched = dp.GraphSchedule.static(2, [])  # self-loops only
    for b in (1, 2, 5):
        assert not dp.validate_b_connectivity(sched, b, 20).ok


def test_augment_no_delay_is_identity_embedding():
    W = complete_graph(4).weights_at(0)
    A = dp.augment(W, np.zeros((4, 4), dtype=int), 0)
    assert np.array_equal(A, W)


def test_augment_size_and_block_placement():
    sched = complete_graph(5)
    W = sched.weights_at(0)
    D = np.zeros((5, 5), dtype=int)
    D[3, 1] = 1
    A = dp.augment(W, D, 2)
    assert A.shape == (15, 15)  # V' = V + tau*V
    # the delayed weight moves from block 0 to block 1
    assert A[3, 1] == 0.0
    assert A[3, 5 + 1] == W[3, 1]
    # virtual chain shifts
    assert A[5 + 2, 2] == 1.0 and A[10 + 2, 5 + 2] == 1.0


def test_augment_blocks_partition_weights_and_stay_row_stochastic():
    rng = np.random.default_rng(3)
    from dpgames.cli import benchmark_graph
    sched = benchmark_graph()
    tau = 3
    for t in range(12):
        W = sched.weights_at(t)
        D = rng.integers(0, tau + 1, size=(5, 5))
        np.fill_diagonal(D, 0)
        A = dp.augment(W, D, tau)
        assert np.abs(A.sum(axis=1) - 1.0).max() <= 1e-12
        recovered = sum(A[:5, r * 5:(r + 1) * 5] for r in range(tau + 1))
        assert np.array_equal(recovered, W)


def test_augment_rejects_out_of_range_delay():
    W = complete_graph(3).weights_at(0)
    D = np.zeros((3, 3), dtype=int)
    D[0, 1] = 4
    with pytest.raises(DelayRangeError):
        dp.augment(W, D, 3)
    D[0, 1] = 0
    D[1, 1] = 1  # self delay must be zero
    with pytest.raises(DelayRangeError):
        dp.augment(W, D, 3)


def test_backward_products_contract_to_rank_one():
    # row range of the backward product is nonincreasing and -> 0
    rng = np.random.default_rng(11)
    for V, tau in ((3, 1), (5, 3), (6, 2)):
        edges = [(i, (i + 1) % V) for i in range(V)]
        sched = dp.GraphSchedule.static(V, edges)
        delays = dp.DelaySchedule.uniform(tau, seed=int(rng.integers(1 << 30)))
        P = np.eye(V * (tau + 1))
        first_range = None
        prev_range = np.inf
        for t in range(200):
            P = dp.augment(sched.weights_at(t), delays.comm_matrix(t, V), tau) @ P
            rng_now = (P.max(axis=0) - P.min(axis=0)).max()
            if first_range is None:
                first_range = rng_now
            assert rng_now <= prev_range + 1e-12
            prev_range = rng_now
        assert prev_range < min(1e-3, 1e-2 * first_range)


def test_y_diagonal_stays_positive():
    from dpgames.cli import benchmark_graph
    assert dp.eigenvector_floor(benchmark_graph(), 300) > 0
    assert dp.eigenvector_floor(complete_graph(5), 100) == pytest.approx(0.2)


def test_mixing_uniform_pi_on_doubly_stochastic_graph():
    md = dp.mixing_diagnostics(complete_graph(5), dp.DelaySchedule.none(), 40)
    assert np.abs(md.pi_trace - 0.2).max() < 1e-12
    assert 0 < md.lambda_hat < 1


def test_mixing_ring_fit_quality():
    sched = ring_graph(3)
    md = dp.mixing_diagnostics(sched, dp.DelaySchedule.none(), 80)
    assert 0 < md.lambda_hat < 1
    assert md.r_squared > 0.95

    # independent oracle: for a static delay-free schedule the backward
    # product of length k is the explicit matrix power W^k, and pi is the
    # left Perron vector of W
    W = sched.weights_at(0)
    vals, vecs = np.linalg.eig(W.T)
    pi = np.real(vecs[:, np.argmax(np.real(vals))])
    pi = pi / pi.sum()
    powers = [np.linalg.matrix_power(W, k) for k in range(1, 81)]
    expected_devs = np.array([np.abs(P - pi[None, :]).max() for P in powers])
    mask = expected_devs > 1e-12
    assert np.allclose(md.deviations[mask], expected_devs[mask], rtol=1e-6)
    assert np.allclose(md.pi_trace[0], pi, atol=1e-9)

    # deviations really decay like C * lambda^k
    k = np.arange(1, len(md.deviations) + 1)
    pred = md.c_hat * md.lambda_hat ** k
    mask = md.deviations > 1e-14
    assert np.abs(np.log(pred[mask]) - np.log(md.deviations[mask])).max() < 1.0


def test_mixing_benchmark_real_agent_floor(bench_graph):
    delays = dp.DelaySchedule.fixed(2, comm={(3, 1): 2})
    md = dp.mixing_diagnostics(bench_graph, delays, 80)
    assert md.min_pi_real > 0
    trace_sums = md.pi_trace.sum(axis=1)
    assert np.abs(trace_sums - 1.0).max() < 1e-12
    # virtual stages with no mass at some t sit at exactly zero
    assert md.min_pi_all == 0.0


def test_mixing_rejects_disconnected_schedule():
    sched = dp.GraphSchedule.static(4, [(0, 1), (1, 0), (2, 3), (3, 2)])
    with pytest.raises(DiagnosticsError):
        dp.mixing_diagnostics(sched, dp.DelaySchedule.none(), 60)


def test_delay_bounds_and_self_delay():
    d = dp.DelaySchedule.uniform(4, seed=7)
    for t in range(30):
        for i in range(4):
            assert d.comm_delay(i, i, t) == 0
            assert 0 <= d.feedback_delay(i, t) <= 4
            for j in range(4):
                assert 0 <= d.comm_delay(i, j, t) <= 4


def test_delay_schedule_rejects_out_of_range():
    with pytest.raises(DelayRangeError):
        dp.DelaySchedule.fixed(2, comm={(0, 1): 3})
    with pytest.raises(DelayRangeError):
        dp.DelaySchedule(2, comm={"type": "uniform", "low": 0, "high": 5})


def test_random_delays_are_order_independent():
    a = dp.DelaySchedule.uniform(5, seed=123)
    b = dp.DelaySchedule.uniform(5, seed=123)
    queries = [(i, j, t) for t in (0, 3, 17) for i in range(3) for j in range(3)]
    first = [a.comm_delay(i, j, t) for (i, j, t) in queries]
    second = [b.comm_delay(i, j, t) for (i, j, t) in reversed(queries)]
    assert first == list(reversed(second))
    assert any(first)  # not degenerate


def test_procedural_schedule_rule():
    sched = dp.GraphSchedule.procedural(
        3, lambda t: [(0, 1), (1, 2), (2, 0)] if t % 2 == 0 else [(0, 2), (2, 1), (1, 0)])
    assert sched.weights_at(0)[1, 0] > 0 and sched.weights_at(0)[1, 2] == 0
    assert sched.weights_at(1)[1, 0] == 0 and sched.weights_at(1)[1, 2] > 0
    with pytest.raises(ScheduleError):
        sched.to_descriptor()  # not expressible in config


def test_matrix_text_rendering():
    from dpgames.graph import matrix_text
    text = matrix_text(np.array([[0.5, 0.5], [0.0, 1.0]]))
    lines = text.splitlines()
    assert len(lines) == 2
    assert [float(v) for v in lines[0].split()] == [0.5, 0.5]


def test_schedule_and_delay_descriptors_round_trip(bench_graph):
    assert dp.GraphSchedule.from_descriptor(bench_graph.to_descriptor()) == bench_graph
    d = dp.DelaySchedule.fixed(3, comm={(3, 1): 2}, feedback={0: 1})
    assert dp.DelaySchedule.from_descriptor(d.to_descriptor()) == d
    u = dp.DelaySchedule.uniform(10, seed=5)
    assert dp.DelaySchedule.from_descriptor(u.to_descriptor()) == u
