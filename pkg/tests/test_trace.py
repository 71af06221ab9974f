import copy

import numpy as np
import pytest

from propswitch.builders import random_network
from propswitch.network import ScheduleSet, Topology, monotone_closure
from propswitch.sim import run_simulation
from propswitch.trace import SlotRecord, Trace, read_trace_jsonl, verify_trace, write_trace_csv, write_trace_jsonl


@pytest.fixture(scope="module")
def multiclass():
    # three queues, two routes crossing at q2, shared server at (q1, q3)
    topo = Topology.from_paths(["q1", "q2", "q3"], [[0, 1, 2], [1, 0]], [0.25, 0.2])
    S = ScheduleSet.from_blocks(3, [([0, 2], [[1, 0], [0, 1]]), ([1], [[1]])])
    return topo, S


@pytest.mark.parametrize("policy", ["ps", "bp", "mw"])
def test_engine_traces_pass(multiclass, policy):
    topo, S = multiclass
    _, trace = run_simulation(topo, S, policy, slots=3000, warmup=0, seed=3, record_trace=True,
                              initial=[[0, 0, 4], [1, 3], [2]])
    rep = verify_trace(trace, S)
    assert rep.ok, rep
    assert rep.slots_checked == 3000


def _busy_slot(trace):
    return next(i for i, r in enumerate(trace.records) if r.served)


def test_deleted_departure_is_incr_violation(multiclass):
    topo, S = multiclass
    _, trace = run_simulation(topo, S, "ps", slots=500, warmup=0, seed=1, record_trace=True)
    bad = copy.deepcopy(trace)
    i = _busy_slot(bad) + 5
    while not bad.records[i].served:
        i += 1
    bad.records[i].served.pop()
    rep = verify_trace(bad, S)
    assert not rep.ok
    assert rep.equation == "Incr"
    assert rep.slot == bad.records[i].slot


def test_double_service_is_dcov_violation():
    topo = Topology.from_paths(["q"], [[0]], [0.5])
    S = monotone_closure([[1]])
    rec = SlotRecord(1, np.array([2]), [(0, 0, 0), (0, 0, 1)], [], [(0, 0), (0, 1)], np.array([0]))
    rep = verify_trace(Trace(topo, [[(0, 0), (0, 1)]], [rec]), S)
    assert rep.equation == "Dcov" and rep.slot == 1


def test_out_of_order_service_is_dk_violation():
    topo = Topology.from_paths(["q"], [[0]], [0.5])
    S = monotone_closure([[1]])
    rec = SlotRecord(1, np.array([1]), [(0, 0, 1)], [], [(0, 1)], np.array([1]))
    assert verify_trace(Trace(topo, [[(0, 0), (0, 1)]], [rec]), S).equation == "Dk"


def test_random_networks_pass(rng):
    for _ in range(3):
        topo, S = random_network(rng, load=0.8)
        kind = "poisson" if max(topo.rates) > 1 else "bernoulli"
        for policy in ("ps", "bp", "mw"):
            _, trace = run_simulation(topo, S, policy, kind, slots=1000, warmup=0, seed=7, record_trace=True)
            assert verify_trace(trace, S).ok


def test_exports_roundtrip(multiclass, tmp_path):
    topo, S = multiclass
    _, trace = run_simulation(topo, S, "bp", slots=200, warmup=0, seed=2, record_trace=True)
    write_trace_jsonl(trace, tmp_path / "t.jsonl")
    back = read_trace_jsonl(tmp_path / "t.jsonl", topo)
    assert back.discipline == "per_class"
    assert verify_trace(back, S).ok
    write_trace_csv(trace, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "slot,queue,Q_j,served,arrivals"
    assert len(lines) == 1 + 200 * 3
