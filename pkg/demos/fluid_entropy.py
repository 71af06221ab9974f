"""The fluid model of a proportional switch and its entropy Lyapunov function.

Two queues in tandem share one server. Starting from unit mass, the fluid
drains in finite time, the entropy H = L + M decreases along the way, and
its finite-difference slope agrees with the closed-form derivative to first
order in the step size.

Run:  python3 demos/fluid_entropy.py
"""

import numpy as np

from propswitch.fluid import FluidState, integrate_fluid, transient_time, verify_entropy_derivative
from propswitch.network import Topology, monotone_closure

topo = Topology.from_paths(["q1", "q2"], [[0, 1]], [0.3])
S = monotone_closure([[1, 0], [0, 1]])

runs = {}
for h in (4e-3, 2e-3):
    runs[h] = integrate_fluid(FluidState.from_class_masses(topo, [0.6, 0.4]), S, h, 8.0)
tr = runs[2e-3]
print(f"drain time {tr.drain_time:.3f}; H starts at {tr.H[0]:.4f}, min {tr.H.min():.2e}")
for t in (0.0, 1.0, 2.0, 3.0):
    n = int(np.searchsorted(tr.t, t))
    print(f"t={tr.t[n]:4.1f}  Q={np.round(tr.Q[n], 4)}  sigma={np.round(tr.sigma[n], 3)}  H={tr.H[n]:.4f}")

start = max(transient_time(r) for r in runs.values())
end = min(r.drain_time for r in runs.values())
for h, r in runs.items():
    rep = verify_entropy_derivative(r, t_start=start, t_end=end)
    print(f"h={h}: p95 |dH/dt - identity| = {rep.p95_discrepancy:.2e}, non-increasing: {rep.monotone}")

doubled = integrate_fluid(FluidState.from_class_masses(topo, [1.2, 0.8]), S, 2e-3, 16.0)
print(f"doubling the initial mass: drain time x{doubled.drain_time / tr.drain_time:.2f}")
