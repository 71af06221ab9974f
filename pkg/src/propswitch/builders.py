"""Network builders: linear chain, joined trees with root returns, random instances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .network import Block, ScheduleSet, Topology, _colex_sorted_unique, _down_closure


def build_linear_network(J: int, a: float) -> tuple[Topology, ScheduleSet]:
    """J links in series on one route; every link serves one packet per slot."""
    if J < 1:
        raise ValueError("J must be at least 1")
    if not 0 < a < 1:
        raise ValueError("rate must lie in (0, 1)")
    names = [f"q{j + 1}" for j in range(J)]
    topo = Topology.from_paths(names, [list(range(J))], [a], route_names=["line"])
    return topo, ScheduleSet.box([1] * J)


# ---------------------------------------------------------------------------
# Joined trees
# ---------------------------------------------------------------------------


def return_weights(delta: float, tail: float = 1e-4) -> np.ndarray:
    """Probabilities of 0..R_max extra visits, geometric with the tail folded in.

    R_max is the smallest n with (1 - delta)^n < tail.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if delta == 1:
        return np.ones(1)
    rmax = math.ceil(math.log(tail) / math.log(1 - delta))
    while (1 - delta) ** rmax >= tail:
        rmax += 1
    w = delta * (1 - delta) ** np.arange(rmax + 1)
    w[-1] = (1 - delta) ** rmax
    return w


@dataclass(frozen=True)
class TreeLayout:
    """Node paths of the joined trees (leaves shared by both sides)."""

    d: int
    D: int
    leaves: tuple[tuple[int, ...], ...]

    @staticmethod
    def of(d: int, D: int) -> "TreeLayout":
        if D % 2 or D < 2:
            raise ValueError("D must be even and at least 2")
        if d < 2:
            raise ValueError("d must be at least 2")
        paths: list[tuple[int, ...]] = [()]
        for depth in range(D // 2):
            fan = d if depth == 0 else d - 1
            paths = [p + (i,) for p in paths for i in range(fan)]
        return TreeLayout(d, D, tuple(paths))

    def node(self, side: str, prefix: tuple[int, ...]) -> str:
        if len(prefix) == self.D // 2:
            return "X." + ".".join(map(str, prefix))
        return side + "".join(f".{i}" for i in prefix)

    def node_path(self, leaf: tuple[int, ...], src: str) -> list[str]:
        """Nodes from root ``src`` to the other root through ``leaf``."""
        dst = "R" if src == "L" else "L"
        down = [self.node(src, leaf[:i]) for i in range(len(leaf) + 1)]
        up = [self.node(dst, leaf[:i]) for i in range(len(leaf) - 1, -1, -1)]
        return down + up


def build_joined_tree_network(d: int, D: int, delta: float, a: float, tail: float = 1e-4) -> tuple[Topology, ScheduleSet]:
    """Two trees of depth D/2 sharing their leaves, routed root to root.

    Each directed link ``u>v`` is a FIFO queue held by node ``u``; ``L>out`` and
    ``R>out`` are the exit links of the roots. Every leaf carries one route in
    each direction, and each of those is split by the number of extra visits
    to the destination exit link (geometric with parameter ``delta``,
    truncated at R_max). A node serves at most one packet per slot over all of
    its outgoing links. ``a`` is the total rate entering at each root.
    """
    if not a > 0:
        raise ValueError("rate must be positive")
    lay = TreeLayout.of(d, D)
    weights = return_weights(delta, tail)
    queues: list[str] = []
    index: dict[str, int] = {}

    def q(u: str, v: str) -> int:
        name = f"{u}>{v}"
        if name not in index:
            index[name] = len(queues)
            queues.append(name)
        return index[name]

    paths, rates, names = [], [], []
    share = a / len(lay.leaves)
    for src in ("L", "R"):
        dst = "R" if src == "L" else "L"
        for leaf in lay.leaves:
            nodes = lay.node_path(leaf, src)
            hops = [q(u, v) for u, v in zip(nodes[:-1], nodes[1:])]
            exit_q = q(dst, "out")
            tag = "".join(map(str, leaf))
            for n, w in enumerate(weights):
                paths.append(hops + [exit_q] * (n + 1))
                rates.append(share * w)
                names.append(f"{src}{dst}:{tag}:{n}")
    node_of = [name.split(">")[0] for name in queues]
    topo = Topology.from_paths(queues, paths, rates, route_names=names, node_of_queue=node_of)
    blocks = []
    for node, js in topo.nodes.items():
        js = np.sort(js)
        rows = np.vstack([np.zeros(len(js), dtype=np.int64), np.eye(len(js), dtype=np.int64)])
        blocks.append(Block(js, _colex_sorted_unique(rows)))
    return topo, ScheduleSet(len(queues), blocks)


def tree_rate_for_load(load: float, delta: float) -> float:
    """Per-root entry rate a giving root load a (1 + 1/delta) = ``load``."""
    return load / (1.0 + 1.0 / delta)


def node_loads(topo: Topology) -> dict[str, float]:
    return {n: float(topo.queue_rates[js].sum()) for n, js in topo.nodes.items()}


def class_count_formula(d: int, D: int) -> int:
    """Classes at a root under BackPressure: d (d-1)^(D/2-1) + 1."""
    return d * (d - 1) ** (D // 2 - 1) + 1


# ---------------------------------------------------------------------------
# Load and random instances
# ---------------------------------------------------------------------------


def network_load(topo: Topology, S: ScheduleSet, rates=None) -> float:
    """Smallest t with the queue rate vector inside t <S> (1 means critical)."""
    x = topo.queue_rates if rates is None else np.asarray(rates, dtype=float)
    worst = 0.0
    for b in S.blocks:
        xb = x[b.queues]
        if not np.any(xb > 0):
            continue
        if b.kind == "box":
            worst = max(worst, float(np.max(xb / b.caps)))
            continue
        if b.kind == "simplex":
            nz = b.caps > 0
            worst = max(worst, float(np.sum(xb[nz] / b.caps[nz])))
            continue
        V = b.schedules.astype(float)
        res = linprog(np.ones(len(V)), A_ub=-V.T, b_ub=-xb, bounds=(0, None), method="highs")
        worst = max(worst, float(res.fun))
    return worst


def random_network(rng: np.random.Generator, max_queues: int = 8, max_classes: int = 12, max_routes: int = 4,
                   load: float = 0.9, kinds=("box", "simplex", "general")) -> tuple[Topology, ScheduleSet]:
    """Random multiclass network scaled so that ``network_load`` equals ``load``.

    The schedule set is a product of small random blocks of the given kinds.
    """
    n_routes = int(rng.integers(1, max_routes + 1))
    n_queues = int(rng.integers(2, max_queues + 1))
    budget = max_classes
    paths = []
    for r in range(n_routes):
        left = n_routes - r - 1
        length = int(rng.integers(1, max(2, min(5, budget - left) + 1)))
        length = max(1, min(length, budget - left))
        paths.append([int(j) for j in rng.integers(0, n_queues, size=length)])
        budget -= length
    used = sorted({j for p in paths for j in p})
    remap = {j: i for i, j in enumerate(used)}
    paths = [[remap[j] for j in p] for p in paths]
    nq = len(used)
    rates = rng.uniform(0.2, 1.0, size=n_routes)
    topo = Topology.from_paths([f"q{j}" for j in range(nq)], paths, rates)
    perm = rng.permutation(nq)
    blocks, i = [], 0
    while i < nq:
        size = int(rng.integers(2 if i == 0 and nq > 1 else 1, 4))
        js = np.sort(perm[i:i + size])
        i += size
        kind = "general" if not blocks and "general" in kinds and len(js) > 1 else kinds[int(rng.integers(len(kinds)))]
        blocks.append(Block(js, _random_block_rows(rng, len(js), kind)))
    S = ScheduleSet(nq, blocks)
    scale = load / network_load(topo, S)
    topo = Topology(topo.queues, topo.class_queue, topo.routes, tuple(np.asarray(topo.rates) * scale),
                    topo.class_names, topo.route_names, topo.node_of_queue)
    return topo, S


def _random_block_rows(rng: np.random.Generator, m: int, kind: str) -> np.ndarray:
    if kind == "box" or m == 1:
        return _colex_sorted_unique(_down_closure(rng.integers(1, 3, size=(1, m))))
    if kind == "simplex":
        return _colex_sorted_unique(np.vstack([np.zeros(m, dtype=np.int64), np.eye(m, dtype=np.int64)]))
    for _ in range(100):
        raw = rng.integers(0, 3, size=(int(rng.integers(2, 4)), m))
        for c in range(m):
            if raw[:, c].max() == 0:
                raw[int(rng.integers(len(raw))), c] = 1
        rows = _colex_sorted_unique(_down_closure(raw))
        if Block(np.arange(m), rows).kind == "general":
            return rows
    # pairwise-exclusive fallback: (1,1,0,...) style rows are always general
    raw = np.ones((1, m), dtype=np.int64)
    raw = np.vstack([raw - np.eye(m, dtype=np.int64)[c] for c in range(m)]) if m > 2 else np.array([[1, 1], [2, 0]])
    return _colex_sorted_unique(_down_closure(raw))
