"""Network structure: topology, schedule sets and packet-level state.

Queues, classes and routes are indexed by position (0-based). A route is a
sequence of distinct classes; a class lives at exactly one queue and on exactly
one route. ``-1`` plays the role of the outside class in the predecessor and
successor maps.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

OUTSIDE = -1


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Topology:
    """Queues, classes and fixed routes of a multiclass switched network.

    Parameters
    ----------
    queues : sequence of str
        Queue names, in index order.
    class_queue : sequence of int
        Home queue of each class.
    routes : sequence of sequence of int
        For every route, the classes it visits in order.
    rates : sequence of float
        Mean exogenous arrival rate of every route (packets per slot).
    class_names, route_names : sequence of str, optional
        Labels used in exports; generated when omitted.
    node_of_queue : sequence of str, optional
        Node label of every queue (used for per-node accounting). Defaults to
        the queue name itself.
    """

    queues: tuple[str, ...]
    class_queue: tuple[int, ...]
    routes: tuple[tuple[int, ...], ...]
    rates: tuple[float, ...]
    class_names: tuple[str, ...] = ()
    route_names: tuple[str, ...] = ()
    node_of_queue: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "queues", tuple(self.queues))
        object.__setattr__(self, "class_queue", tuple(int(j) for j in self.class_queue))
        object.__setattr__(self, "routes", tuple(tuple(int(k) for k in r) for r in self.routes))
        object.__setattr__(self, "rates", tuple(float(a) for a in self.rates))
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(f"k{k}" for k in range(len(self.class_queue))))
        if not self.route_names:
            object.__setattr__(self, "route_names", tuple(f"r{r}" for r in range(len(self.routes))))
        if not self.node_of_queue:
            object.__setattr__(self, "node_of_queue", tuple(self.queues))

    @classmethod
    def from_paths(
        cls,
        queues: Sequence[str],
        paths: Sequence[Sequence[int]],
        rates: Sequence[float],
        route_names: Sequence[str] = (),
        node_of_queue: Sequence[str] = (),
    ) -> "Topology":
        """Build a topology where each route is given as its sequence of queues.

        One class is created per (route, stage); class indices follow route
        order, then stage order.
        """
        class_queue: list[int] = []
        routes: list[tuple[int, ...]] = []
        names: list[str] = []
        rnames = list(route_names) or [f"r{r}" for r in range(len(paths))]
        for r, path in enumerate(paths):
            ks = []
            for pos, j in enumerate(path):
                ks.append(len(class_queue))
                class_queue.append(int(j))
                names.append(f"{rnames[r]}:{pos}")
            routes.append(tuple(ks))
        return cls(tuple(queues), tuple(class_queue), tuple(routes), tuple(rates),
                   tuple(names), tuple(rnames), tuple(node_of_queue))

    # -- sizes -------------------------------------------------------------

    @property
    def n_queues(self) -> int:
        return len(self.queues)

    @property
    def n_classes(self) -> int:
        return len(self.class_queue)

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    # -- derived maps (valid topologies only) -------------------------------

    @cached_property
    def class_route(self) -> np.ndarray:
        out = np.full(self.n_classes, -1, dtype=np.int64)
        for r, ks in enumerate(self.routes):
            for k in ks:
                if 0 <= k < self.n_classes:
                    out[k] = r
        return out

    @cached_property
    def queue_of_class(self) -> np.ndarray:
        return np.asarray(self.class_queue, dtype=np.int64)

    @cached_property
    def next_class(self) -> np.ndarray:
        out = np.full(self.n_classes, OUTSIDE, dtype=np.int64)
        for ks in self.routes:
            for a, b in zip(ks[:-1], ks[1:]):
                out[a] = b
        return out

    @cached_property
    def prev_class(self) -> np.ndarray:
        out = np.full(self.n_classes, OUTSIDE, dtype=np.int64)
        for ks in self.routes:
            for a, b in zip(ks[:-1], ks[1:]):
                out[b] = a
        return out

    @cached_property
    def input_class(self) -> np.ndarray:
        return np.array([ks[0] for ks in self.routes], dtype=np.int64)

    @cached_property
    def output_class(self) -> np.ndarray:
        return np.array([ks[-1] for ks in self.routes], dtype=np.int64)

    @cached_property
    def route_rates(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    @cached_property
    def class_rates(self) -> np.ndarray:
        """a_k = a_{r(k)}."""
        return self.route_rates[self.class_route]

    @cached_property
    def queue_rates(self) -> np.ndarray:
        """a_j = sum of a_k over classes at j."""
        return np.bincount(self.queue_of_class, weights=self.class_rates, minlength=self.n_queues)

    @cached_property
    def classes_at(self) -> tuple[np.ndarray, ...]:
        qc = self.queue_of_class
        return tuple(np.flatnonzero(qc == j) for j in range(self.n_queues))

    @cached_property
    def nodes(self) -> dict[str, np.ndarray]:
        out: dict[str, list[int]] = {}
        for j, node in enumerate(self.node_of_queue):
            out.setdefault(node, []).append(j)
        return {n: np.asarray(js, dtype=np.int64) for n, js in out.items()}

    def aggregate_classes(self, per_class: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Sum a per-class vector to per-queue and per-route views."""
        v = np.asarray(per_class)
        by_queue = np.bincount(self.queue_of_class, weights=v, minlength=self.n_queues)
        by_route = np.bincount(self.class_route, weights=v, minlength=self.n_routes)
        if np.issubdtype(v.dtype, np.integer):
            return by_queue.astype(np.int64), by_route.astype(np.int64)
        return by_queue, by_route


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_topology(topo: Topology) -> ValidationReport:
    """Check the structural assumptions on queues, classes and routes.

    Never raises; returns a report listing every violation found.
    """
    report = ValidationReport()
    nk, nj = topo.n_classes, topo.n_queues
    if len(topo.rates) != topo.n_routes:
        report.violations.append("route count and rate count differ")
    for k, j in enumerate(topo.class_queue):
        if not 0 <= j < nj:
            report.violations.append(f"class {k} assigned to unknown queue {j}")
    seen: dict[int, int] = {}
    for r, ks in enumerate(topo.routes):
        if not ks:
            report.violations.append(f"route {r} is empty")
        if len(set(ks)) != len(ks):
            report.violations.append(f"class repeated on route {r}")
        for k in ks:
            if not 0 <= k < nk:
                report.violations.append(f"route {r} references dangling class {k}")
                continue
            if k in seen and seen[k] != r:
                report.violations.append(f"class {k} appears on routes {seen[k]} and {r}")
            seen.setdefault(k, r)
    for k in range(nk):
        if k not in seen:
            report.violations.append(f"class {k} is on no route")
    for r, a in enumerate(topo.rates):
        if not (a > 0 and np.isfinite(a)):
            report.violations.append(f"non-positive arrival rate on route {r}")
    if report.ok:
        nxt, prv = topo.next_class, topo.prev_class
        for r, ks in enumerate(topo.routes):
            if prv[ks[0]] != OUTSIDE or nxt[ks[-1]] != OUTSIDE:
                report.violations.append(f"route {r} boundary classes are linked")
        for k in range(nk):
            if prv[k] != OUTSIDE and nxt[prv[k]] != k:
                report.violations.append(f"next(prev({k})) != {k}")
        if not np.allclose(topo.queue_rates,
                           [topo.class_rates[topo.classes_at[j]].sum() for j in range(nj)]):
            report.violations.append("queue rates do not sum class rates")
    return report


# ---------------------------------------------------------------------------
# Schedule sets
# ---------------------------------------------------------------------------


def _colex_sorted_unique(rows: np.ndarray) -> np.ndarray:
    rows = np.unique(np.asarray(rows, dtype=np.int64).reshape(len(rows), -1), axis=0)
    if rows.shape[1] == 0:
        return rows
    return rows[np.lexsort(rows.T)]


def _down_closure(rows: np.ndarray) -> np.ndarray:
    out: set[tuple[int, ...]] = set()
    for v in rows:
        out.update(itertools.product(*(range(int(c) + 1) for c in v)))
    return np.array(sorted(out), dtype=np.int64).reshape(len(out), rows.shape[1])


@dataclass(frozen=True, eq=False)
class Block:
    """Downward-closed schedules over a subset of queues.

    ``schedules`` rows are sorted colexicographically (last coordinate most
    significant); argmax ties are resolved by taking the first row.
    """

    queues: np.ndarray
    schedules: np.ndarray

    @cached_property
    def caps(self) -> np.ndarray:
        return self.schedules.max(axis=0)

    @cached_property
    def kind(self) -> str:
        caps = self.caps
        if len(self.schedules) == int(np.prod(caps + 1)):
            return "box"
        if np.all((self.schedules > 0).sum(axis=1) <= 1):
            return "simplex"
        return "general"

    @property
    def size(self) -> int:
        return len(self.queues)

    def restrict(self, q: np.ndarray) -> "Block":
        mask = np.all(self.schedules <= q, axis=1)
        return Block(self.queues, self.schedules[mask])


class ScheduleSet:
    """A finite downward-closed set of integer schedules.

    Stored as a product of independent blocks over disjoint queue subsets;
    a single block is the general case. The set itself is the Cartesian
    product of the block schedule sets.
    """

    def __init__(self, n_queues: int, blocks: Iterable[Block]):
        self.n_queues = int(n_queues)
        self.blocks = tuple(sorted(blocks, key=lambda b: int(b.queues[0]) if b.size else -1))
        covered = np.concatenate([b.queues for b in self.blocks]) if self.blocks else np.array([], int)
        if sorted(covered.tolist()) != list(range(self.n_queues)):
            raise ValueError("blocks must partition the queues")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_blocks(cls, n_queues: int, blocks: Iterable[tuple[Sequence[int], Sequence[Sequence[int]]]]) -> "ScheduleSet":
        built = []
        for queues, raw in blocks:
            qs = np.asarray(queues, dtype=np.int64)
            order = np.argsort(qs)
            rows = np.asarray(raw, dtype=np.int64).reshape(len(raw), len(qs))[:, order]
            built.append(Block(qs[order], _colex_sorted_unique(_down_closure(_check_rows(rows)))))
        return cls(n_queues, built)

    @classmethod
    def box(cls, caps: Sequence[int]) -> "ScheduleSet":
        """Independent queues; queue j serves up to caps[j] packets per slot."""
        return cls(len(caps), [Block(np.array([j]), np.arange(int(c) + 1).reshape(-1, 1))
                               for j, c in enumerate(caps)])

    @classmethod
    def product(cls, *sets: "ScheduleSet") -> "ScheduleSet":
        """Cartesian product; queue indices of later factors are shifted."""
        blocks, offset = [], 0
        for s in sets:
            blocks.extend(Block(b.queues + offset, b.schedules) for b in s.blocks)
            offset += s.n_queues
        return cls(offset, blocks)

    # -- queries ------------------------------------------------------------

    @cached_property
    def sigma_max(self) -> int:
        return int(max(b.schedules.max() for b in self.blocks))

    @cached_property
    def caps(self) -> np.ndarray:
        out = np.zeros(self.n_queues, dtype=np.int64)
        for b in self.blocks:
            out[b.queues] = b.caps
        return out

    @property
    def cardinality(self) -> int:
        return int(np.prod([len(b.schedules) for b in self.blocks], dtype=object))

    @property
    def schedules(self) -> np.ndarray:
        """All schedules as rows (colexicographic order). Only for small sets."""
        if self.cardinality > 200_000:
            raise ValueError("schedule set too large to enumerate")
        out = np.zeros((1, self.n_queues), dtype=np.int64)
        for b in self.blocks:
            reps = len(out)
            new = np.repeat(out, len(b.schedules), axis=0)
            new[:, b.queues] = np.tile(b.schedules, (reps, 1))
            out = new
        return _colex_sorted_unique(out)

    def __contains__(self, sigma) -> bool:
        v = np.asarray(sigma, dtype=np.int64)
        return all((b.schedules == v[b.queues]).all(axis=1).any() for b in self.blocks)

    def __len__(self) -> int:
        return self.cardinality

    def as_single_block(self) -> "ScheduleSet":
        return ScheduleSet(self.n_queues, [Block(np.arange(self.n_queues), self.schedules)])

    def hull_contains(self, point, tol: float = 1e-9) -> bool:
        """Is ``point`` in the convex hull of the set (blockwise test)."""
        p = np.asarray(point, dtype=float)
        if np.any(p < -tol):
            return False
        for b in self.blocks:
            pb = p[b.queues]
            if np.any(pb > b.caps + tol):
                return False
            # the hull of a downward-closed set is downward closed in the orthant
            if np.any(np.all(b.schedules >= pb - tol, axis=1)):
                continue
            if b.kind == "simplex":
                nz = b.caps > 0
                if np.sum(pb[nz] / b.caps[nz]) <= 1 + tol:
                    continue
                return False
            if not in_convex_hull(pb, b.schedules, tol):
                return False
        return True

    def check(self) -> list[str]:
        """Structural invariants; returns the list of violations."""
        problems = []
        for b in self.blocks:
            rows = {tuple(r) for r in b.schedules.tolist()}
            if (0,) * b.size not in rows:
                problems.append("zero schedule missing")
            for r in rows:
                for i, c in enumerate(r):
                    if c > 0 and r[:i] + (c - 1,) + r[i + 1:] not in rows:
                        problems.append(f"not downward closed at {r}")
                        break
        caps = self.caps
        if np.any(caps <= 0):
            problems.append(f"queues never served: {np.flatnonzero(caps <= 0).tolist()}")
        else:
            # centroid of per-queue maximisers is strictly positive
            centre = np.zeros(self.n_queues)
            for b in self.blocks:
                tops = [b.schedules[np.argmax(b.schedules[:, i])] for i in range(b.size)]
                centre[b.queues] = np.mean(tops, axis=0)
            if not (np.all(centre > 0) and self.hull_contains(centre)):
                problems.append("convex hull has empty interior")
        return problems


def _check_rows(rows: np.ndarray) -> np.ndarray:
    if rows.size == 0 and len(rows) == 0:
        raise ValueError("no schedules given")
    if np.any(rows < 0):
        raise ValueError("schedules must be non-negative integer vectors")
    return rows


def monotone_closure(raw: Sequence[Sequence[int]], n_queues: int | None = None) -> ScheduleSet:
    """Smallest downward-closed set containing ``raw`` and the zero vector."""
    if len(raw) == 0:
        raise ValueError("no schedules given")
    arr = np.asarray(raw)
    if arr.ndim != 2 or not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("schedules must be integer vectors of equal length")
    arr = _check_rows(arr.astype(np.int64))
    n = arr.shape[1] if n_queues is None else n_queues
    if arr.shape[1] != n:
        raise ValueError("schedule length differs from number of queues")
    return ScheduleSet(n, [Block(np.arange(n), _colex_sorted_unique(_down_closure(arr)))])


def restrict_to_queue_caps(S: ScheduleSet, Q) -> ScheduleSet:
    """S_Q: the schedules of S serving no more than Q_j at each queue."""
    q = np.asarray(Q)
    return ScheduleSet(S.n_queues, [b.restrict(q[b.queues]) for b in S.blocks])


def in_convex_hull(point, vertices, tol: float = 1e-9) -> bool:
    """Linear feasibility: is ``point`` a convex combination of ``vertices``.

    Solves min ||V^T lam - p||_1 over the simplex; feasible when the optimum is
    within ``tol``.
    """
    V = np.asarray(vertices, dtype=float)
    p = np.asarray(point, dtype=float)
    n, d = V.shape
    # variables: lam (n), u (d), v (d);  V^T lam - u + v = p
    c = np.concatenate([np.zeros(n), np.ones(2 * d)])
    A_eq = np.zeros((d + 1, n + 2 * d))
    A_eq[:d, :n] = V.T
    A_eq[:d, n:n + d] = -np.eye(d)
    A_eq[:d, n + d:] = np.eye(d)
    A_eq[d, :n] = 1.0
    b_eq = np.concatenate([p, [1.0]])
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    return bool(res.status == 0 and res.fun <= tol)


# ---------------------------------------------------------------------------
# Packet-level state
# ---------------------------------------------------------------------------


@dataclass
class NetworkState:
    """Packet contents of every queue plus cumulative counters.

    Each packet is a tuple ``(class, packet id, slot it joined this queue,
    slot it entered the network)``. With ``per_class`` set, each class keeps
    its own buffer (class-priority service); otherwise every queue is one FIFO
    sequence, head first.
    """

    topo: Topology
    per_class: bool = False
    slot: int = 0
    fifo: list = field(default_factory=list)
    buffers: list = field(default_factory=list)
    Qk: np.ndarray = None
    Qj: np.ndarray = None
    Ak: np.ndarray = None
    Dk: np.ndarray = None
    Qk0: np.ndarray = None
    next_id: int = 0

    def __post_init__(self):
        t = self.topo
        if not self.fifo:
            self.fifo = [deque() for _ in range(t.n_queues)]
        if not self.buffers:
            self.buffers = [deque() for _ in range(t.n_classes)]
        if self.Qk is None:
            self.Qk = np.zeros(t.n_classes, dtype=np.int64)
            self.Qj = np.zeros(t.n_queues, dtype=np.int64)
        if self.Ak is None:
            self.Ak = np.zeros(t.n_classes, dtype=np.int64)
            self.Dk = np.zeros(t.n_classes, dtype=np.int64)
        if self.Qk0 is None:
            self.Qk0 = self.Qk.copy()

    @classmethod
    def from_contents(cls, topo: Topology, contents: Sequence[Sequence[int]], per_class: bool = False) -> "NetworkState":
        """Initial state from per-queue class sequences (head first)."""
        st = cls(topo, per_class=per_class)
        for j, seq in enumerate(contents):
            for k in seq:
                if topo.class_queue[k] != j:
                    raise ValueError(f"class {k} does not live at queue {j}")
                st._push(int(k), 0, 0)
        st.Qk0 = st.Qk.copy()
        st.Ak[:] = 0
        return st

    def _push(self, k: int, slot: int, entered: int, pid: int | None = None) -> None:
        if pid is None:
            pid = self.next_id
            self.next_id += 1
        pkt = (k, pid, slot, entered)
        if self.per_class:
            self.buffers[k].append(pkt)
        else:
            self.fifo[self.topo.class_queue[k]].append(pkt)
        self.Qk[k] += 1
        self.Qj[self.topo.class_queue[k]] += 1
        self.Ak[k] += 1

    def contents(self, j: int) -> list[int]:
        """Class tags at queue j in service order (per-class buffers: by id)."""
        if not self.per_class:
            return [p[0] for p in self.fifo[j]]
        pkts = [p for k in self.topo.classes_at[j] for p in self.buffers[k]]
        return [p[0] for p in sorted(pkts, key=lambda p: p[1])]

    @property
    def Qj0(self) -> np.ndarray:
        return self.topo.aggregate_classes(self.Qk0)[0]

    @property
    def Qr(self) -> np.ndarray:
        return np.bincount(self.topo.class_route, weights=self.Qk, minlength=self.topo.n_routes).astype(np.int64)

    def cumulative(self) -> dict[str, np.ndarray]:
        """A_x and D_x for classes, queues and routes."""
        t = self.topo
        Aj, _ = t.aggregate_classes(self.Ak)
        Dj, _ = t.aggregate_classes(self.Dk)
        return {
            "Ak": self.Ak.copy(), "Dk": self.Dk.copy(),
            "Aj": Aj, "Dj": Dj,
            "Ar": self.Ak[t.input_class].copy(), "Dr": self.Dk[t.output_class].copy(),
        }


def queue_length_views(state: NetworkState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(Q_j, Q_k, Q_r) counted from the packet contents themselves."""
    t = state.topo
    Qk = np.zeros(t.n_classes, dtype=np.int64)
    if state.per_class:
        for k, buf in enumerate(state.buffers):
            Qk[k] = len(buf)
    else:
        for q in state.fifo:
            for p in q:
                Qk[p[0]] += 1
    Qj, Qr = t.aggregate_classes(Qk)
    return Qj, Qk, Qr
