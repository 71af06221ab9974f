import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from propswitch.network import (
    OUTSIDE, NetworkState, ScheduleSet, Topology, in_convex_hull, monotone_closure, queue_length_views,
    restrict_to_queue_caps, validate_topology,
)
from propswitch.schedulers import SchedulerKind, make_scheduler
from propswitch.sim import philox, step_slot


def rows(S):
    return {tuple(r) for r in S.schedules.tolist()}


def tandem(rate=0.3):
    return Topology.from_paths(["q1", "q2"], [[0, 1]], [rate])


class TestTopology:
    def test_tandem_is_valid(self):
        assert validate_topology(tandem()).ok

    def test_repeated_class(self):
        topo = Topology(("q1",), (0,), ((0, 0),), (0.5,))
        rep = validate_topology(topo)
        assert not rep.ok
        assert any("class repeated on route" in v for v in rep.violations)

    def test_non_positive_rate(self):
        rep = validate_topology(tandem(0.0))
        assert any("non-positive arrival rate" in v for v in rep.violations)

    def test_dangling_class(self):
        topo = Topology(("q1",), (0,), ((0, 3),), (0.5,))
        assert any("dangling" in v for v in validate_topology(topo).violations)

    def test_maps(self):
        topo = Topology.from_paths(["a", "b", "c"], [[0, 1, 2], [2, 0]], [0.2, 0.3])
        assert topo.prev_class.tolist() == [OUTSIDE, 0, 1, OUTSIDE, 3]
        assert topo.next_class.tolist() == [1, 2, OUTSIDE, 4, OUTSIDE]
        assert topo.input_class.tolist() == [0, 3]
        assert topo.output_class.tolist() == [2, 4]
        np.testing.assert_allclose(topo.queue_rates, [0.5, 0.2, 0.5])


class TestScheduleSets:
    @pytest.mark.parametrize("raw, expect", [
        ([[1, 1]], {(0, 0), (1, 0), (0, 1), (1, 1)}),
        ([[2, 0]], {(0, 0), (1, 0), (2, 0)}),
        ([[1, 0], [0, 1]], {(0, 0), (1, 0), (0, 1)}),
    ])
    def test_closure_examples(self, raw, expect):
        assert rows(monotone_closure(raw)) == expect

    @pytest.mark.parametrize("raw, Q, expect", [
        ([[1, 1]], [1, 0], {(0, 0), (1, 0)}),
        ([[1, 1]], [0, 0], {(0, 0)}),
        ([[2, 0]], [1, 5], {(0, 0), (1, 0)}),
    ])
    def test_restriction_examples(self, raw, Q, expect):
        assert rows(restrict_to_queue_caps(monotone_closure(raw), Q)) == expect

    def test_closure_errors(self):
        with pytest.raises(ValueError):
            monotone_closure([])
        with pytest.raises(ValueError):
            monotone_closure([[1, -1]])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 3), min_size=3, max_size=3), min_size=1, max_size=4))
    def test_closure_idempotent(self, raw):
        S = monotone_closure(raw)
        assert rows(monotone_closure(S.schedules.tolist())) == rows(S)
        assert S.check() == [] or any(max(r[c] for r in raw) == 0 for c in range(3))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 3), min_size=3, max_size=3), min_size=1, max_size=4),
           st.lists(st.integers(0, 4), min_size=3, max_size=3))
    def test_restriction_is_closed_subset(self, raw, Q):
        S = monotone_closure(raw)
        R = restrict_to_queue_caps(S, Q)
        assert rows(R) <= rows(S)
        assert all(np.all(np.array(r) <= Q) for r in rows(R))
        assert rows(monotone_closure(R.schedules.tolist())) == rows(R)

    def test_product_and_box(self):
        S = ScheduleSet.product(monotone_closure([[1, 0], [0, 1]]), ScheduleSet.box([2]))
        assert S.cardinality == 9
        assert (1, 0, 2) in rows(S)
        assert [1, 1, 0] not in S
        assert S.sigma_max == 2

    def test_hull(self, shared):
        assert shared.hull_contains([0.5, 0.5])
        assert not shared.hull_contains([0.6, 0.6])
        assert in_convex_hull([0.5, 0.5], [[0, 0], [1, 0], [0, 1]])
        general = monotone_closure([[1, 1, 0], [0, 1, 1], [1, 0, 1]])
        assert general.hull_contains([2 / 3, 2 / 3, 2 / 3])
        assert not general.hull_contains([0.7, 0.7, 0.7])

    def test_check_reports_empty_interior(self):
        S = ScheduleSet.from_blocks(2, [([0, 1], [[1, 0]])])
        assert any("never served" in p for p in S.check())


class TestState:
    def topo(self):
        # r1: k0@q1 -> k1@q2 ; r2: k2@q1
        return Topology.from_paths(["q1", "q2"], [[0, 1], [0]], [0.2, 0.2])

    def test_empty(self):
        st_ = NetworkState.from_contents(self.topo(), [[], []])
        for v in queue_length_views(st_):
            assert not v.any()

    def test_counting_and_service(self):
        topo = self.topo()
        st_ = NetworkState.from_contents(topo, [[0, 0, 2], [1]])
        Qj, Qk, Qr = queue_length_views(st_)
        assert Qj.tolist() == [3, 1]
        assert Qk.tolist() == [2, 1, 1]
        assert Qr.tolist() == [3, 1]
        sched = make_scheduler(topo, ScheduleSet.from_blocks(2, [([0], [[1]]), ([1], [[0]])]),
                               SchedulerKind("ps"), philox(0, 1))
        step_slot(st_, sched, None)
        Qj, Qk, _ = queue_length_views(st_)
        assert Qj.tolist() == [2, 2]
        assert st_.Dk.tolist() == [1, 0, 0]
        # Q = Q(0) + A - D for classes, queues and routes
        np.testing.assert_array_equal(Qk, st_.Qk0 + st_.Ak - st_.Dk)
        cum = st_.cumulative()
        np.testing.assert_array_equal(Qj, st_.Qj0 + cum["Aj"] - cum["Dj"])

    def test_wrong_home_queue(self):
        with pytest.raises(ValueError):
            NetworkState.from_contents(self.topo(), [[1], []])
