"""Delay along a line of J links: proportional scheduling versus BackPressure.

With every link serving one packet per slot, proportional scheduling keeps
each queue at about the arrival rate a, so the total grows like a J. Under
BackPressure a packet only moves when its queue is longer than the next one,
so queues build up in a staircase from source to sink and the total grows
roughly quadratically in J.

Run:  python3 demos/linear_delay.py [slots]
"""

import sys

from propswitch.builders import build_linear_network
from propswitch.experiments import run_linear_experiment
from propswitch.sim import run_simulation

slots = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
a = 0.6

topo, S = build_linear_network(10, a)
print(f"Line of 10 links, Bernoulli({a}) arrivals, {slots} slots\n")
print("position   proportional   backpressure")
ps, _ = run_simulation(topo, S, "ps", slots=slots, seed=1)
bp, _ = run_simulation(topo, S, "bp", slots=slots, seed=1)
for j, (x, y) in enumerate(zip(ps.mean_queue, bp.mean_queue), start=1):
    print(f"{j:8d}   {x:12.3f}   {y:12.3f}")
print(f"   total   {ps.mean_total:12.3f}   {bp.mean_total:12.3f}")
print(f"mean sojourn (slots): {ps.mean_sojourn():.2f} vs {bp.mean_sojourn():.2f}\n")

res = run_linear_experiment([4, 8, 16], a, ["ps", "bp"], slots=slots, profile_J=None)
for policy, e in sorted(res.exponents.items()):
    print(f"{policy}: total queue grows like J^{e:.2f}")
