"""Auditing a simulation against the FIFO network equations.

A short run on a three-queue network with crossing routes is recorded slot
by slot and checked. Then one departure is deleted from the record and the
verifier points at the slot where the bookkeeping breaks.

Run:  python3 demos/trace_audit.py
"""

import copy

from propswitch.network import ScheduleSet, Topology
from propswitch.sim import run_simulation
from propswitch.trace import verify_trace

topo = Topology.from_paths(["q1", "q2", "q3"], [[0, 1, 2], [1, 0]], [0.25, 0.2])
S = ScheduleSet.from_blocks(3, [([0, 2], [[1, 0], [0, 1]]), ([1], [[1]])])

for policy in ("ps", "bp", "mw"):
    st, trace = run_simulation(topo, S, policy, slots=5000, warmup=0, seed=2, record_trace=True)
    rep = verify_trace(trace, S)
    print(f"{policy}: {len(trace)} slots, {'all equations hold' if rep.ok else rep}")

bad = copy.deepcopy(trace)
rec = next(r for r in bad.records[100:] if r.served)
rec.served.pop()
rep = verify_trace(bad, S)
print(f"after deleting one departure at slot {rec.slot}: violation of eq:{rep.equation} at slot {rep.slot} ({rep.detail})")
