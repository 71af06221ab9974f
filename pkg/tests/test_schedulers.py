import itertools

import numpy as np
import pytest

from propswitch.builders import build_joined_tree_network
from propswitch.network import ScheduleSet, Topology, monotone_closure, restrict_to_queue_caps
from propswitch.schedulers import (
    Policy, RateAllocation, SchedulerKind, backpressure_schedule, backpressure_weights, linear_schedule_oracle,
    maxweight_schedule, sample_schedule, scheduler_state_size, solve_block, solve_proportional_fair,
)

from conftest import random_closure


def tandem():
    return Topology.from_paths(["q1", "q2"], [[0, 1]], [0.3])


class TestProportionalFair:
    def test_shared_server(self, shared):
        np.testing.assert_allclose(solve_proportional_fair([2, 1], shared).sigma, [2 / 3, 1 / 3], atol=1e-9)

    def test_single_nonempty(self, shared):
        np.testing.assert_allclose(solve_proportional_fair([5, 0], shared).sigma, [1, 0])

    def test_rectangle(self):
        S = monotone_closure([[1, 1, 1]])
        np.testing.assert_allclose(solve_proportional_fair([1, 1, 1], S).sigma, [1, 1, 1])

    def test_scale(self, shared):
        a = solve_proportional_fair([2, 1], shared).sigma
        b = solve_proportional_fair([20, 10], shared).sigma
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_grid_cross_check(self, shared):
        g = np.linspace(1e-3, 1 - 1e-3, 999)
        best = g[np.argmax(2 * np.log(g) + np.log(1 - g))]
        assert abs(solve_proportional_fair([2, 1], shared).sigma[0] - best) < 1e-3

    def test_general_block_and_decomposition(self):
        S = monotone_closure([[1, 1, 0], [0, 1, 1], [1, 0, 1]])
        alloc = solve_proportional_fair([3, 2, 1], S)
        assert alloc.duality_gap <= 1e-8 * 6
        sigma = sum(w * s for s, w in alloc.support)
        np.testing.assert_allclose(sigma, alloc.sigma, atol=1e-7)
        assert abs(sum(w for _, w in alloc.support) - 1) < 1e-12
        assert S.hull_contains(alloc.sigma, 1e-7)

    def test_zero_queue_convention(self, rng):
        for _ in range(30):
            S = random_closure(rng, 3)
            Q = rng.integers(0, 4, size=3)
            if not Q.any():
                continue
            alloc = solve_proportional_fair(Q, S)
            assert np.all(alloc.sigma[Q == 0] == 0)
            assert restrict_to_queue_caps(S, Q).hull_contains(alloc.sigma, 1e-7)

    def test_cold_and_warm_starts_agree(self, rng):
        S = monotone_closure([[2, 1, 0], [0, 1, 2], [1, 1, 1]])
        b = S.blocks[0]
        for _ in range(20):
            q1 = rng.integers(2, 9, size=3).astype(float)
            q2 = q1 + rng.integers(0, 3, size=3)
            _, atoms, w, *_ = solve_block(b, q1)
            V = b.schedules[np.all(b.schedules <= q2, axis=1)]
            warm = {int(np.flatnonzero((V == a).all(axis=1))[0]): float(x) for a, x in zip(atoms, w)
                    if (V == a).all(axis=1).any()}
            cold = solve_block(b, q2)[0]
            hot = solve_block(b, q2, warm=warm)[0]
            np.testing.assert_allclose(cold, hot, atol=1e-6)

    def test_lower_bound(self, rng):
        topo, S = build_joined_tree_network(3, 2, 1.0, 0.1)
        eps, low = 0.2, np.inf
        for _ in range(1000):
            Q = rng.integers(0, 50, size=topo.n_queues)
            if not Q.any():
                continue
            sigma = solve_proportional_fair(Q, S).sigma
            big = Q >= eps * Q.sum()
            if big.any():
                low = min(low, sigma[big].min())
        assert low > 1e-4

    def test_negative_queue_rejected(self, shared):
        with pytest.raises(ValueError):
            solve_proportional_fair([-1, 2], shared)


class TestOracles:
    def test_linear_oracle(self, shared):
        assert linear_schedule_oracle([3, 1], shared).tolist() == [1, 0]
        assert linear_schedule_oracle([0, 0], shared).tolist() == [0, 0]
        assert linear_schedule_oracle([1, 1], monotone_closure([[1, 1]])).tolist() == [1, 1]

    @pytest.mark.parametrize("Q, expect", [([3, 1], [1, 0]), ([1, 1], [1, 0]), ([0, 4], [0, 1])])
    def test_maxweight(self, shared, Q, expect):
        assert maxweight_schedule(Q, shared).tolist() == expect

    def test_backpressure_examples(self):
        topo, S = tandem(), monotone_closure([[1, 1]])
        w, _ = backpressure_weights([5, 2], topo)
        assert w.tolist() == [3, 2]
        sigma, kstar = backpressure_schedule([5, 2], topo, S)
        assert sigma.tolist() == [1, 1] and kstar.tolist() == [0, 1]
        sigma, _ = backpressure_schedule([1, 3], topo, S)
        assert sigma[0] == 0
        sigma, _ = backpressure_schedule([0, 0], topo, S)
        assert not sigma.any()

    def test_backpressure_caps_at_class_length(self):
        topo = Topology.from_paths(["q"], [[0]], [0.5])
        sigma, _ = backpressure_schedule([1], topo, ScheduleSet.box([3]))
        assert sigma.tolist() == [1]

    def test_nonpositive_weight_not_served(self, rng):
        topo = Topology.from_paths(["a", "b", "c"], [[0, 1, 2], [2, 1]], [0.2, 0.2])
        S = monotone_closure([[1, 0, 1], [0, 1, 0]])
        for _ in range(200):
            Qk = rng.integers(0, 5, size=topo.n_classes)
            w, _ = backpressure_weights(Qk, topo)
            sigma, _ = backpressure_schedule(Qk, topo, S)
            assert np.all(sigma[w <= 0] == 0)


class TestSampling:
    def test_unbiased(self):
        alloc = RateAllocation.from_support([((1, 0), 2 / 3), ((0, 1), 1 / 3)])
        rng = np.random.default_rng(0)
        N = 200_000
        draws = np.array([sample_schedule(alloc, rng) for _ in range(N)])
        for p, m in zip([2 / 3, 1 / 3], draws.mean(axis=0)):
            assert abs(m - p) <= 4 * np.sqrt(p * (1 - p) / N)

    def test_singleton_and_zero(self, shared):
        rng = np.random.default_rng(0)
        alloc = RateAllocation.from_support([((1, 1), 1.0)])
        assert sample_schedule(alloc, rng).tolist() == [1, 1]
        assert sample_schedule(solve_proportional_fair([0, 0], shared), rng).tolist() == [0, 0]


class TestMisc:
    def test_state_size(self):
        topo, _ = build_joined_tree_network(4, 4, 1.0, 0.1)
        assert scheduler_state_size(topo, "bp", "L") == 13
        # one counter per queue held by the root: d child links plus the exit link
        assert scheduler_state_size(topo, "ps", "L") == len(topo.nodes["L"]) == 5
        topo, _ = build_joined_tree_network(3, 2, 1.0, 0.1)
        assert scheduler_state_size(topo, "bp", "L") == 4

    def test_policy_parse(self):
        assert Policy.parse("BackPressure") is Policy.BP
        with pytest.raises(ValueError):
            SchedulerKind("nope")
        with pytest.raises(ValueError):
            SchedulerKind("ps", tolerance=0)

    def test_product_argmax(self, rng):
        S1, S2 = random_closure(rng, 2), random_closure(rng, 2)
        P = ScheduleSet.product(S1, S2)
        joint = P.as_single_block()
        for _ in range(50):
            g = rng.integers(-2, 5, size=4).astype(float)
            assert linear_schedule_oracle(g, P).tolist() == linear_schedule_oracle(g, joint).tolist()
