from collections import deque

import numpy as np
import pytest

from propswitch.fluid import (
    FluidState, default_step, entropy_H, fluid_rates, fluid_step, integrate_fluid, log_bound_holds,
    verify_entropy_derivative,
)
from propswitch.network import ScheduleSet, Topology, monotone_closure


def single(a=0.1):
    return Topology.from_paths(["q"], [[0]], [a]), monotone_closure([[1]])


def shared_pair(a=0.3):
    return Topology.from_paths(["q1", "q2"], [[0], [1]], [a, a]), monotone_closure([[1, 0], [0, 1]])


def tandem(a=0.3):
    return Topology.from_paths(["q1", "q2"], [[0, 1]], [a]), monotone_closure([[1, 0], [0, 1]])


class TestRates:
    def test_shared_server(self):
        topo, S = shared_pair()
        np.testing.assert_allclose(fluid_rates(FluidState.from_class_masses(topo, [2, 1]), S).drain, [2 / 3, 1 / 3])

    def test_pass_through(self):
        topo, S = Topology.from_paths(["q1", "q2"], [[0, 1]], [0.3]), ScheduleSet.box([1, 1])
        r = fluid_rates(FluidState.from_class_masses(topo, [1.0, 0.0]), S)
        assert r.empty.tolist() == [False, True]
        # q2 is empty and forwards what q1 sends it
        np.testing.assert_allclose(r.drain, [1.0, 1.0])

    def test_pass_through_capped_by_spare(self):
        topo, S = tandem()
        r = fluid_rates(FluidState.from_class_masses(topo, [1.0, 0.0]), S)
        np.testing.assert_allclose(r.drain, [1.0, 0.0])

    def test_all_empty(self):
        topo = Topology.from_paths(["q1", "q2"], [[0, 1]], [0.3])
        st = FluidState(topo, [deque() for _ in range(2)], q0=1.0)
        r = fluid_rates(st, ScheduleSet.box([1, 1]))
        assert not r.sigma.any()


class TestStep:
    def test_single_queue(self):
        topo, S = single(1e-9)
        st = FluidState.from_class_masses(topo, [1.0])
        fluid_step(st, S, 0.1)
        assert st.masses[0] == pytest.approx(0.9, abs=1e-9)

    def test_mass_conservation(self):
        topo, S = tandem()
        st = FluidState.from_class_masses(topo, [0.7, 0.5])
        for _ in range(50):
            before = st.masses.sum()
            moved = fluid_step(st, S, 0.01)
            exits = moved["out"][topo.output_class].sum()
            assert st.masses.sum() - before == pytest.approx(0.3 * 0.01 - exits, abs=1e-14)

    def test_fifo_slug_order(self):
        topo, S = Topology.from_paths(["q1", "q2"], [[0, 1], [1]], [0.1, 0.1]), ScheduleSet.box([1, 1])
        st = FluidState.from_slugs(topo, [[(1.0, {0: 1.0})], [(0.5, {2: 1.0})]])
        fluid_step(st, S, 0.1)
        head, tail = st.queues[1][0], st.queues[1][-1]
        # q2's own content stays at the head; q1's output joins the tail
        assert head[1][topo.classes_at[1].tolist().index(2)] == 1.0
        assert tail[1][topo.classes_at[1].tolist().index(1)] > 0.5

    def test_rejects_bad_step(self):
        topo, S = single()
        with pytest.raises(ValueError):
            fluid_step(FluidState.from_class_masses(topo, [1.0]), S, 0.0)


class TestEntropy:
    def test_single_queue_value(self):
        topo, S = single(0.2)
        H, L, M = entropy_H(FluidState.from_class_masses(topo, [3.0]), S)
        assert L == pytest.approx(0.0)
        assert H == pytest.approx(3.0 * np.log(1 / 0.2))

    def test_tandem_trajectory(self):
        topo, S = tandem()
        traj = integrate_fluid(FluidState.from_class_masses(topo, [0.6, 0.4]), S, 2e-3, 10.0)
        assert traj.drain_time is not None and traj.drain_time < 10
        assert traj.H.min() >= -1e-9
        assert traj.mass_error < 1e-12
        rep = verify_entropy_derivative(traj)
        assert rep.monotone and rep.checked > 100

    def test_zero_start_stays_zero(self):
        topo, S = tandem()
        st = FluidState(topo, [deque() for _ in range(2)], q0=1.0)
        traj = integrate_fluid(st, S, 1e-2, 2.0)
        assert traj.Q.sum(axis=1).max() < 1e-6
        assert np.abs(traj.H).max() < 1e-6

    def test_default_step(self):
        assert default_step(1.0) == pytest.approx(2e-3)

    def test_log_bound(self, rng):
        x = rng.uniform(0.01, 5, 1000)
        y = rng.uniform(0.01, 5, 1000)
        K = np.maximum(x, y) + rng.uniform(0, 5, 1000)
        assert log_bound_holds(x, y, K).min() >= -1e-12
