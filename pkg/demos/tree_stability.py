"""Two trees joined at their leaves, with packets looping back at the roots.

Every root node carries traffic to and from its subtree plus geometric extra
visits to its exit link. MaxWeight favours the long exit queues at the
roots and starves the links that feed the far side, so it loses stability
below full load. Proportional scheduling and BackPressure stay stable.

Run:  python3 demos/tree_stability.py [slots]
"""

import sys

from propswitch.builders import build_joined_tree_network, node_loads, tree_rate_for_load
from propswitch.schedulers import scheduler_state_size
from propswitch.sim import detect_stability, run_simulation

slots = int(sys.argv[1]) if len(sys.argv) > 1 else 60_000
d, D, delta, load = 4, 4, 0.4142, 0.9

topo, S = build_joined_tree_network(d, D, delta, tree_rate_for_load(load, delta))
print(f"joined trees d={d} D={D}: {topo.n_queues} queues, {topo.n_classes} classes, {topo.n_routes} routes")
print(f"root load {node_loads(topo)['L']:.3f}")
print(f"state kept at a root: proportional {scheduler_state_size(topo, 'ps', 'L')} counters, "
      f"BackPressure {scheduler_state_size(topo, 'bp', 'L')} counters\n")
for policy in ("ps", "bp", "mw"):
    st, _ = run_simulation(topo, S, policy, slots=slots, seed=3)
    v = detect_stability(st.total_series, st.arrival_rate)
    print(f"{policy}: mean total queue {st.mean_total:9.1f}  final {st.total_series[-1]:6d}  "
          f"drift {v.slope:+.4f}  -> {v.label}")
