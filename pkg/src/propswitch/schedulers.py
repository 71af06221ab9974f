"""Proportional Scheduler, BackPressure and MaxWeight.

Every optimization splits over the blocks of a :class:`ScheduleSet`: the
objectives are separable across blocks and the colexicographic tie rule
(compare the last coordinate first) picks the same element of a product set
whether it is applied jointly or block by block.

The proportional-fair problem ``max sum_j Q_j log sigma_j`` over the convex
hull of S_Q has closed forms on box blocks (saturate) and on simplex blocks
(``sigma_j = c_j Q_j / |Q|``). Other blocks are solved by away-step
Frank-Wolfe over mixture weights, whose iterate doubles as the randomized
decomposition used for sampling.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .network import OUTSIDE, Block, ScheduleSet, Topology, restrict_to_queue_caps


class StarvedQueueError(ValueError):
    """A nonempty queue cannot be served by any schedule."""


class Policy(str, enum.Enum):
    PS = "ps"
    BP = "bp"
    MW = "mw"

    @classmethod
    def parse(cls, name: str) -> "Policy":
        aliases = {"proportional": cls.PS, "proportionalscheduler": cls.PS, "backpressure": cls.BP,
                   "maxweight": cls.MW}
        key = name.strip().lower().replace("-", "").replace("_", "")
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class SchedulerKind:
    """Policy choice plus solver settings.

    ``tolerance`` is relative: Frank-Wolfe stops once its gap is at most
    ``tolerance * sum(Q)``.
    """

    policy: Policy = Policy.PS
    tolerance: float = 1e-8
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.policy, Policy):
            object.__setattr__(self, "policy", Policy.parse(self.policy))
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


# ---------------------------------------------------------------------------
# Rate allocations
# ---------------------------------------------------------------------------


@dataclass
class BlockSupport:
    queues: np.ndarray
    atoms: np.ndarray  # rows are schedules restricted to ``queues``
    weights: np.ndarray


@dataclass
class RateAllocation:
    """A point of <S_Q> with one convex decomposition per block."""

    sigma: np.ndarray
    blocks: list[BlockSupport] = field(default_factory=list)
    duality_gap: float = 0.0
    iterations: int = 0
    capped: bool = False

    @classmethod
    def from_support(cls, support: Sequence[tuple[Sequence[int], float]]) -> "RateAllocation":
        atoms = np.array([s for s, _ in support], dtype=np.int64)
        w = np.array([p for _, p in support], dtype=float)
        sigma = w @ atoms
        return cls(sigma, [BlockSupport(np.arange(atoms.shape[1]), atoms, w)])

    @property
    def support(self) -> list[tuple[np.ndarray, float]]:
        """Product decomposition as (schedule, weight) pairs."""
        n = len(self.sigma)
        out = [(np.zeros(n, dtype=np.int64), 1.0)]
        for b in self.blocks:
            nxt = []
            for s, p in out:
                for atom, w in zip(b.atoms, b.weights):
                    v = s.copy()
                    v[b.queues] = atom
                    nxt.append((v, p * float(w)))
            out = nxt
        return out


def _phi_prime(gamma, q, x, d):
    z = x + gamma * d
    if np.any(z <= 0):
        return -np.inf
    return float(np.sum(q * d / z))


def _line_search(q, x, d, gmax, iters=60):
    """Root of the decreasing phi'(gamma) on [0, gmax]: Newton kept inside a bisection bracket."""
    if _phi_prime(gmax, q, x, d) >= 0:
        return gmax
    lo, hi = 0.0, gmax
    g = 0.0
    for _ in range(iters):
        z = x + g * d
        r = d / z
        f = float(np.dot(q, r))
        if f > 0:
            lo = g
        else:
            hi = g
        if hi - lo <= 1e-15 * max(1.0, hi) or f == 0:
            break
        nxt = g + f / float(np.dot(q, r * r))
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        elif np.any(x + nxt * d <= 0):
            nxt = 0.5 * (lo + hi)
        if nxt == g:
            break
        g = nxt
    return lo if _phi_prime(g, q, x, d) == -np.inf else g


def _frank_wolfe(q: np.ndarray, V: np.ndarray, tol: float, max_iter: int, warm: dict | None = None):
    """Away-step Frank-Wolfe for max sum q_j log x_j over conv(rows of V).

    Returns (x, weights over rows of V, gap, iterations, capped).
    """
    P = q > 0
    qP = q[P]
    full = V
    keep = _pareto_rows(V[:, P])  # a maximizer mixes only atoms undominated on supp(q)
    V = V[keep]
    VP = V[:, P].astype(float)
    n = len(V)
    lam = np.zeros(n)
    if warm:
        pos = {int(i): k for k, i in enumerate(keep)}
        for i, w in warm.items():
            if i in pos:
                lam[pos[i]] = w
    if lam.sum() <= 0 or np.any(lam @ VP <= 0):
        lam[:] = 0
        for c in range(VP.shape[1]):
            lam[int(np.argmax(VP[:, c]))] += 1
    lam /= lam.sum()
    total = qP.sum()
    gap, it = np.inf, 0
    for it in range(1, max_iter + 1):
        x = lam @ VP
        g = qP / x
        scores = VP @ g
        s = int(np.argmax(scores))
        gx = float(g @ x)
        gap = float(scores[s] - gx)
        if gap <= tol * total:
            break
        active = np.flatnonzero(lam > 0)
        a = int(active[np.argmin(scores[active])])
        gap_away = gx - float(scores[a])
        if gap >= gap_away or lam[a] >= 1.0:
            d = VP[s] - x
            gamma = _line_search(qP, x, d, 1.0)
            lam *= 1.0 - gamma
            lam[s] += gamma
        else:
            gmax = lam[a] / (1.0 - lam[a])
            d = x - VP[a]
            gamma = _line_search(qP, x, d, gmax)
            lam *= 1.0 + gamma
            lam[a] -= gamma
            if gamma >= gmax:
                lam[a] = 0.0
        lam[lam < 1e-15] = 0.0
        lam /= lam.sum()
    else:
        x = lam @ VP
        g = qP / x
        gap = float(np.max(VP @ g) - g @ x)
        return lam @ V, _expand(lam, keep, len(full)), gap, max_iter, gap > tol * total
    return lam @ V, _expand(lam, keep, len(full)), max(gap, 0.0), it, False


def _pareto_rows(W: np.ndarray) -> np.ndarray:
    """Indices of rows not dominated by another row (first copy of duplicates kept)."""
    keep = []
    for i, w in enumerate(W):
        ge = np.all(W >= w, axis=1)
        if np.any(ge & np.any(W > w, axis=1)) or np.any(ge[:i] & np.all(W[:i] == w, axis=1)):
            continue
        keep.append(i)
    return np.array(keep, dtype=int)


def _expand(lam, keep, n):
    out = np.zeros(n)
    out[keep] = lam
    return out


def _block_atoms(block: Block, qb: np.ndarray, fluid: bool) -> np.ndarray:
    if fluid:
        V = block.schedules * (qb > 0)
        V = np.unique(V, axis=0)
        return V[np.lexsort(V.T)]
    return block.schedules[np.all(block.schedules <= qb, axis=1)]


def solve_block(block: Block, qb: np.ndarray, kind: SchedulerKind = SchedulerKind(), fluid: bool = False,
                warm: dict | None = None):
    """Proportional-fair allocation on one block.

    Returns (sigma_b, atoms, weights, gap, iterations, capped).
    """
    qb = np.asarray(qb, dtype=float)
    m = block.size
    if not np.any(qb > 0):
        return np.zeros(m), np.zeros((1, m), dtype=np.int64), np.ones(1), 0.0, 0, False
    caps = block.caps if fluid else np.minimum(block.caps, np.floor(qb).astype(np.int64))
    caps = np.where(qb > 0, caps, 0)
    if np.any(caps[qb > 0] <= 0):
        raise StarvedQueueError(f"starved queue(s) {block.queues[(qb > 0) & (caps <= 0)].tolist()}")
    kind_ = block.kind
    if kind_ == "box":
        return caps.astype(float), caps.reshape(1, -1).astype(np.int64), np.ones(1), 0.0, 0, False
    if kind_ == "simplex":
        nz = np.flatnonzero(qb > 0)
        w = qb[nz] / qb.sum()
        atoms = np.zeros((len(nz), m), dtype=np.int64)
        atoms[np.arange(len(nz)), nz] = caps[nz]
        return caps * qb / qb.sum(), atoms, w, 0.0, 0, False
    V = _block_atoms(block, qb, fluid)
    if len(np.flatnonzero(qb > 0)) == 1:
        j = int(np.flatnonzero(qb > 0)[0])
        i = int(np.argmax(V[:, j]))
        return V[i].astype(float), V[i:i + 1], np.ones(1), 0.0, 0, False
    x, lam, gap, it, capped = _frank_wolfe(qb, V, kind.tolerance, kind.max_iter, warm)
    keep = lam > 0
    return x, V[keep], lam[keep], gap, it, capped


def solve_proportional_fair(Q, S: ScheduleSet, kind: SchedulerKind = SchedulerKind(), fluid: bool = False) -> RateAllocation:
    """Maximize sum_j Q_j log sigma_j over <S_Q> (or <S> when ``fluid``).

    Coordinates with Q_j = 0 are forced to 0. Q = 0 gives the zero allocation
    with an empty support.
    """
    q = np.asarray(Q, dtype=float)
    if np.any(q < 0):
        raise ValueError("queue lengths must be non-negative")
    sigma = np.zeros(S.n_queues)
    if not np.any(q > 0):
        return RateAllocation(sigma, [])
    blocks, gap, iters, capped = [], 0.0, 0, False
    for b in S.blocks:
        xb, atoms, w, g, it, cp = solve_block(b, q[b.queues], kind, fluid)
        sigma[b.queues] = xb
        blocks.append(BlockSupport(b.queues, atoms, w))
        gap += g
        iters = max(iters, it)
        capped |= cp
    return RateAllocation(sigma, blocks, gap, iters, capped)


def sample_schedule(alloc: RateAllocation, rng: np.random.Generator) -> np.ndarray:
    """Draw a schedule with mean ``alloc.sigma`` (independently per block)."""
    out = np.zeros(len(alloc.sigma), dtype=np.int64)
    for b in alloc.blocks:
        i = 0 if len(b.weights) == 1 else int(rng.choice(len(b.weights), p=b.weights / b.weights.sum()))
        out[b.queues] = b.atoms[i]
    return out


def linear_schedule_oracle(gradient, S_Q: ScheduleSet) -> np.ndarray:
    """argmax over S_Q of <gradient, sigma>; ties go to the colex-smallest schedule."""
    g = np.asarray(gradient, dtype=float)
    out = np.zeros(S_Q.n_queues, dtype=np.int64)
    for b in S_Q.blocks:
        scores = b.schedules @ g[b.queues]
        out[b.queues] = b.schedules[int(np.argmax(scores))]
    return out


def maxweight_schedule(Qj, S: ScheduleSet) -> np.ndarray:
    """argmax over S_Q of sum_j Q_j sigma_j (colex tie rule)."""
    q = np.asarray(Qj)
    return linear_schedule_oracle(q, restrict_to_queue_caps(S, q))


def backpressure_weights(Qk, topo: Topology) -> tuple[np.ndarray, np.ndarray]:
    """Per-queue weight w_j and maximizing class k*_j (-1 when j has no class)."""
    Qk = np.asarray(Qk, dtype=np.int64)
    nxt = topo.next_class
    down = np.where(nxt == OUTSIDE, 0, Qk[np.maximum(nxt, 0)])
    diff = Qk - down
    w = np.full(topo.n_queues, np.iinfo(np.int64).min, dtype=np.int64)
    kstar = np.full(topo.n_queues, -1, dtype=np.int64)
    for j, ks in enumerate(topo.classes_at):
        if len(ks):
            i = int(np.argmax(diff[ks]))
            w[j], kstar[j] = diff[ks][i], ks[i]
    return w, kstar


def backpressure_schedule(Qk, topo: Topology, S: ScheduleSet) -> tuple[np.ndarray, np.ndarray]:
    """BackPressure schedule and the class served at each queue (-1 if none)."""
    Qk = np.asarray(Qk, dtype=np.int64)
    w, kstar = backpressure_weights(Qk, topo)
    wpos = np.where(kstar >= 0, w, 0).astype(float)
    sigma = linear_schedule_oracle(wpos, S)
    serve = (w > 0) & (kstar >= 0)
    sigma = np.where(serve, np.minimum(sigma, Qk[np.maximum(kstar, 0)]), 0)
    return sigma.astype(np.int64), np.where(sigma > 0, kstar, -1)


def scheduler_state_size(topo: Topology, kind: SchedulerKind | Policy | str, node: str | None = None) -> int:
    """Counters a scheduler keeps: per queue for PS/MW, per class for BackPressure.

    Classes whose remaining paths coincide share a counter. With ``node``
    given, only queues of that node are counted.
    """
    policy = kind.policy if isinstance(kind, SchedulerKind) else Policy.parse(kind) if isinstance(kind, str) else kind
    queues = range(topo.n_queues) if node is None else topo.nodes[node].tolist()
    if policy is not Policy.BP:
        return len(queues)
    suffixes = set()
    nxt = topo.next_class
    for j in queues:
        for k in topo.classes_at[j]:
            path, c = [], int(k)
            while c != OUTSIDE:
                path.append(topo.class_queue[c])
                c = int(nxt[c])
            suffixes.add(tuple(path))
    return len(suffixes)


# ---------------------------------------------------------------------------
# Stateful schedulers used by the engine
# ---------------------------------------------------------------------------


class _BlockIndex:
    """Vectorized views of the box and simplex blocks of a schedule set."""

    def __init__(self, S: ScheduleSet):
        self.S = S
        box = [b for b in S.blocks if b.kind == "box"]
        simp = [b for b in S.blocks if b.kind == "simplex"]
        self.general = [b for b in S.blocks if b.kind == "general"]
        self.box_q = np.concatenate([b.queues for b in box]) if box else np.zeros(0, np.int64)
        self.box_cap = np.concatenate([b.caps for b in box]) if box else np.zeros(0, np.int64)
        self.simp_q = np.concatenate([b.queues for b in simp]) if simp else np.zeros(0, np.int64)
        self.simp_cap = np.concatenate([b.caps for b in simp]) if simp else np.zeros(0, np.int64)
        sizes = [b.size for b in simp]
        self.simp_start = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if simp else np.zeros(0, np.int64)
        self.simp_block = np.repeat(np.arange(len(simp)), sizes) if simp else np.zeros(0, np.int64)
        self.n_simp = len(simp)

    def linear_argmax(self, weights: np.ndarray, caps_q: np.ndarray | None) -> np.ndarray:
        """Colex-first argmax of <weights, sigma> over S (or S_Q with caps_q)."""
        out = np.zeros(self.S.n_queues, dtype=np.int64)
        w = weights
        if len(self.box_q):
            cap = self.box_cap if caps_q is None else np.minimum(self.box_cap, caps_q[self.box_q])
            out[self.box_q] = np.where(w[self.box_q] > 0, cap, 0)
        if self.n_simp:
            cap = self.simp_cap if caps_q is None else np.minimum(self.simp_cap, caps_q[self.simp_q])
            val = np.where(w[self.simp_q] > 0, w[self.simp_q] * cap, 0)
            best = np.maximum.reduceat(val, self.simp_start)
            # first position in each block attaining a positive maximum
            hit = (val == best[self.simp_block]) & (val > 0)
            pos = np.flatnonzero(hit)
            first = pos[np.r_[True, self.simp_block[pos][1:] != self.simp_block[pos][:-1]]] if len(pos) else pos
            out[self.simp_q[first]] = cap[first]
        for b in self.general:
            V = b.schedules if caps_q is None else b.schedules[np.all(b.schedules <= caps_q[b.queues], axis=1)]
            out[b.queues] = V[int(np.argmax(V @ w[b.queues]))]
        return out


class Scheduler:
    """Common interface: ``schedule(Qj, Qk) -> (sigma, class per queue or None)``."""

    discipline = "fifo"

    def __init__(self, topo: Topology, S: ScheduleSet, kind: SchedulerKind, rng: np.random.Generator):
        self.topo, self.S, self.kind, self.rng = topo, S, kind, rng
        self.index = _BlockIndex(S)
        self.gaps: list[float] = []

    def schedule(self, Qj: np.ndarray, Qk: np.ndarray):
        raise NotImplementedError


class MaxWeightScheduler(Scheduler):
    def schedule(self, Qj, Qk):
        return self.index.linear_argmax(Qj.astype(float), Qj), None


class BackPressureScheduler(Scheduler):
    discipline = "per_class"

    def __init__(self, topo, S, kind, rng):
        super().__init__(topo, S, kind, rng)
        nxt = topo.next_class
        self._has_next = nxt != OUTSIDE
        self._nxt = np.maximum(nxt, 0)
        # classes grouped by queue, for segment maxima
        order = np.argsort(topo.queue_of_class, kind="stable")
        self._order = order
        self._q_sorted = topo.queue_of_class[order]
        self._starts = np.flatnonzero(np.r_[True, self._q_sorted[1:] != self._q_sorted[:-1]])
        self._qs = self._q_sorted[self._starts]

    def schedule(self, Qj, Qk):
        diff = (Qk - np.where(self._has_next, Qk[self._nxt], 0))[self._order]
        best = np.maximum.reduceat(diff, self._starts)
        seg = np.repeat(np.arange(len(self._starts)), np.diff(np.r_[self._starts, len(diff)]))
        hit = np.flatnonzero(diff == best[seg])
        first = hit[np.r_[True, seg[hit][1:] != seg[hit][:-1]]]
        nj = self.topo.n_queues
        w = np.zeros(nj, dtype=np.int64)
        kstar = np.full(nj, -1, dtype=np.int64)
        w[self._qs] = best
        kstar[self._qs] = self._order[first]
        wpos = np.where(w > 0, w, 0).astype(float)
        sigma = self.index.linear_argmax(wpos, None)
        sigma = np.where(w > 0, np.minimum(sigma, Qk[np.maximum(kstar, 0)]), 0)
        return sigma, np.where(sigma > 0, kstar, -1)


class ProportionalScheduler(Scheduler):
    """Solve the proportional-fair problem each slot and sample a schedule."""

    def __init__(self, topo, S, kind, rng, cache_size: int = 4096):
        super().__init__(topo, S, kind, rng)
        self._cache: list[OrderedDict] = [OrderedDict() for _ in self.index.general]
        self.cache_size = cache_size

    def schedule(self, Qj, Qk):
        ix = self.index
        out = np.zeros(self.S.n_queues, dtype=np.int64)
        if len(ix.box_q):
            out[ix.box_q] = np.minimum(ix.box_cap, Qj[ix.box_q])
        if ix.n_simp:
            q = Qj[ix.simp_q].astype(float)
            cs = np.cumsum(q)
            tot_end = cs[np.r_[ix.simp_start[1:] - 1, len(q) - 1]]
            base = tot_end - np.add.reduceat(q, ix.simp_start)
            totals = tot_end - base
            u = self.rng.random(ix.n_simp) * totals
            pos = np.searchsorted(cs, base + u, side="right")
            live = totals > 0
            pos = np.minimum(pos[live], len(q) - 1)
            out[ix.simp_q[pos]] = np.minimum(ix.simp_cap[pos], Qj[ix.simp_q[pos]])
        for bi, b in enumerate(ix.general):
            qb = Qj[b.queues]
            key = qb.tobytes()
            cache = self._cache[bi]
            hit = cache.get(key)
            if hit is None:
                _, atoms, w, gap, _, _ = solve_block(b, qb, self.kind)
                hit = (atoms, w / w.sum())
                self.gaps.append(gap)
                cache[key] = hit
                if len(cache) > self.cache_size:
                    cache.popitem(last=False)
            else:
                cache.move_to_end(key)
            atoms, w = hit
            i = 0 if len(w) == 1 else int(self.rng.choice(len(w), p=w))
            out[b.queues] = atoms[i]
        return out, None


def make_scheduler(topo: Topology, S: ScheduleSet, kind: SchedulerKind, rng: np.random.Generator) -> Scheduler:
    cls = {Policy.PS: ProportionalScheduler, Policy.BP: BackPressureScheduler, Policy.MW: MaxWeightScheduler}
    return cls[kind.policy](topo, S, kind, rng)
