"""Discrete-time simulation engine.

Slot ``t`` (0-based) runs as follows: the scheduler looks at the queue lengths
at the start of the slot, head packets are served, every served packet is
either handed to its next class or leaves the network, and finally routed
packets (ascending class index) then exogenous arrivals (ascending class
index) are appended. A packet served in slot ``t`` can be served again at the
earliest in slot ``t + 1``.

Random numbers come from Philox generators keyed by the run seed. Arrivals
for slot ``t`` depend only on ``(seed, t)``; scheduler sampling uses its own
stream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .network import OUTSIDE, NetworkState, ScheduleSet, Topology
from .schedulers import Scheduler, SchedulerKind, make_scheduler
from .trace import SlotRecord, Trace

CHUNK = 4096
ARRIVAL_STREAM = 0
SCHEDULER_STREAM = 1


class SchedulerContractError(RuntimeError):
    """The scheduler asked to serve more packets than a queue holds."""


def philox(seed: int, stream: int, block: int = 0) -> np.random.Generator:
    key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, block, stream]))


@dataclass(frozen=True)
class ArrivalProcess:
    """Per-route i.i.d. arrival counts, Bernoulli or Poisson."""

    rates: tuple[float, ...]
    kind: str = "bernoulli"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(a) for a in self.rates))
        if self.kind not in ("bernoulli", "poisson"):
            raise ValueError(f"unknown arrival kind {self.kind!r}")
        for a in self.rates:
            if not a > 0:
                raise ValueError("arrival rates must be positive")
            if self.kind == "bernoulli" and a > 1:
                raise ValueError("Bernoulli rates must lie in (0, 1]")


class ArrivalStream:
    """Deterministic arrivals: slot ``t`` draws from chunk ``t // CHUNK``."""

    def __init__(self, proc: ArrivalProcess):
        self.proc = proc
        self._rates = np.asarray(proc.rates)
        self._chunk = -1
        self._data: np.ndarray | None = None

    def _load(self, c: int) -> None:
        rng = philox(self.proc.seed, ARRIVAL_STREAM, c)
        if self.proc.kind == "bernoulli":
            self._data = (rng.random((CHUNK, len(self._rates))) < self._rates).astype(np.int64)
        else:
            self._data = rng.poisson(self._rates, size=(CHUNK, len(self._rates))).astype(np.int64)
        self._chunk = c

    def __call__(self, slot: int) -> np.ndarray:
        c = slot // CHUNK
        if c != self._chunk:
            self._load(c)
        return self._data[slot - c * CHUNK]


def generate_arrivals(proc: ArrivalProcess, slot: int) -> np.ndarray:
    """Per-route arrival counts for one slot; a pure function of (seed, slot)."""
    return ArrivalStream(proc)(slot).copy()


# ---------------------------------------------------------------------------
# One slot
# ---------------------------------------------------------------------------


@dataclass
class _Plan:
    """Python-list copies of topology maps (faster scalar access)."""

    cq: list
    nxt: list
    route: list
    inputs: list

    @classmethod
    def of(cls, topo: Topology) -> "_Plan":
        return cls(topo.queue_of_class.tolist(), topo.next_class.tolist(), topo.class_route.tolist(),
                   topo.input_class.tolist())


def step_slot(state: NetworkState, scheduler: Scheduler, arrivals: np.ndarray, record: bool = False,
              plan: _Plan | None = None):
    """Advance ``state`` by one slot.

    Returns ``(exits, record)`` where ``exits`` lists ``(route, entry slot)``
    for packets leaving the network and ``record`` is a :class:`SlotRecord`
    when requested.
    """
    plan = plan or _Plan.of(state.topo)
    t = state.slot
    Qj, Qk, A, D = state.Qj, state.Qk, state.Ak, state.Dk
    sigma, kstar = scheduler.schedule(Qj, Qk)
    if np.any(sigma > Qj):
        j = int(np.flatnonzero(sigma > Qj)[0])
        raise SchedulerContractError(f"slot {t}: scheduler serves {int(sigma[j])} at queue {j} holding {int(Qj[j])}")
    cq, nxt, route = plan.cq, plan.nxt, plan.route
    served_ev, arr_ev, exit_ev = ([], [], []) if record else (None, None, None)
    routed: list[tuple[int, int, int]] = []
    exits: list[tuple[int, int]] = []
    for j in np.flatnonzero(sigma).tolist():
        n = int(sigma[j])
        if state.per_class:
            k = int(kstar[j])
            if len(state.buffers[k]) < n:
                raise SchedulerContractError(f"slot {t}: class {k} holds fewer than {n} packets")
            buf = state.buffers[k]
        else:
            buf = state.fifo[j]
        for _ in range(n):
            k, pid, _, entered = buf.popleft()
            D[k] += 1
            Qk[k] -= 1
            if record:
                served_ev.append((j, k, pid))
            m = nxt[k]
            if m == OUTSIDE:
                exits.append((route[k], entered))
                if record:
                    exit_ev.append((route[k], pid))
            else:
                routed.append((m, pid, entered))
        Qj[j] -= n
    routed.sort(key=lambda p: p[0])
    end = t + 1
    per_class = state.per_class
    for m, pid, entered in routed:
        (state.buffers[m] if per_class else state.fifo[cq[m]]).append((m, pid, end, entered))
        A[m] += 1
        Qk[m] += 1
        Qj[cq[m]] += 1
        if record:
            arr_ev.append((cq[m], m, pid, False))
    if arrivals is not None and arrivals.any():
        inputs = plan.inputs
        order = sorted((inputs[r], int(c)) for r, c in enumerate(arrivals.tolist()) if c)
        for k, c in order:
            j = cq[k]
            target = state.buffers[k] if per_class else state.fifo[j]
            for _ in range(c):
                pid = state.next_id
                state.next_id += 1
                target.append((k, pid, end, end))
                if record:
                    arr_ev.append((j, k, pid, True))
            A[k] += c
            Qk[k] += c
            Qj[j] += c
    state.slot = end
    rec = SlotRecord(end, sigma.copy(), served_ev, arr_ev, exit_ev, Qk.copy()) if record else None
    return exits, rec


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class GapSummary:
    count: int = 0
    max: float = 0.0
    total: float = 0.0

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def add(self, gaps: Iterable[float]) -> None:
        for g in gaps:
            self.count += 1
            self.total += g
            self.max = max(self.max, g)

    def merged(self, other: "GapSummary") -> "GapSummary":
        return GapSummary(self.count + other.count, max(self.max, other.max), self.total + other.total)


@dataclass
class SimStats:
    """Post-warm-up statistics of one run (or of several merged runs)."""

    queue_names: tuple[str, ...]
    route_names: tuple[str, ...]
    slots: int
    warmup: int
    measured_slots: int
    mean_queue: np.ndarray
    total_series: np.ndarray  # total queue at the end of every slot (all slots)
    sojourn_hist: list[np.ndarray]  # per route; index = sojourn in slots
    gaps: GapSummary = field(default_factory=GapSummary)
    queue_series: np.ndarray | None = None  # (measured slots, queues) when recorded
    arrival_rate: float = 0.0

    @property
    def mean_total(self) -> float:
        return float(self.mean_queue.sum())

    @property
    def departed(self) -> int:
        return int(sum(h.sum() for h in self.sojourn_hist))

    def mean_sojourn(self) -> float:
        n = self.departed
        if not n:
            return float("nan")
        return float(sum((np.arange(len(h)) * h).sum() for h in self.sojourn_hist) / n)

    def to_rows(self) -> list[tuple[str, str]]:
        rows = [("slots", str(self.slots)), ("warmup", str(self.warmup)),
                ("mean_total_queue", f"{self.mean_total:.6f}"), ("departed", str(self.departed)),
                ("mean_sojourn", f"{self.mean_sojourn():.6f}"), ("solver_calls", str(self.gaps.count)),
                ("solver_gap_max", f"{self.gaps.max:.6e}")]
        rows += [(f"mean_queue[{q}]", f"{v:.6f}") for q, v in zip(self.queue_names, self.mean_queue)]
        return sorted(rows)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            w.writerows(self.to_rows())


def merge_stats(stats: Sequence[SimStats]) -> SimStats:
    """Combine runs of the same network; weights follow measured slots."""
    if not stats:
        raise ValueError("nothing to merge")
    first = stats[0]
    n = sum(s.measured_slots for s in stats)
    mean = sum(s.mean_queue * s.measured_slots for s in stats) / max(n, 1)
    width = [max(len(s.sojourn_hist[r]) for s in stats) for r in range(len(first.sojourn_hist))]
    hist = [sum(np.pad(s.sojourn_hist[r], (0, width[r] - len(s.sojourn_hist[r]))) for s in stats)
            for r in range(len(width))]
    gaps = GapSummary()
    for s in stats:
        gaps = gaps.merged(s.gaps)
    return SimStats(first.queue_names, first.route_names, sum(s.slots for s in stats), sum(s.warmup for s in stats),
                    n, mean, np.concatenate([s.total_series for s in stats]), hist, gaps, None, first.arrival_rate)


def default_warmup(slots: int) -> int:
    return min(slots // 5, 100_000)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def run_simulation(topo: Topology, S: ScheduleSet, kind: SchedulerKind | str, arrivals: ArrivalProcess | str = "bernoulli",
                   slots: int = 10_000, warmup: int | None = None, seed: int = 0, record_trace: bool = False,
                   record_queues: bool = False, initial: Sequence[Sequence[int]] | None = None):
    """Simulate ``slots`` slots; returns ``(SimStats, Trace or None)``.

    ``arrivals`` is either a full :class:`ArrivalProcess` or the name of a
    distribution, in which case the topology's route rates and ``seed`` are used.
    """
    if isinstance(kind, str):
        kind = SchedulerKind(kind)
    if isinstance(arrivals, str):
        arrivals = ArrivalProcess(topo.rates, arrivals, seed)
    warmup = default_warmup(slots) if warmup is None else int(warmup)
    sched = make_scheduler(topo, S, kind, philox(seed, SCHEDULER_STREAM))
    per_class = sched.discipline == "per_class"
    state = NetworkState.from_contents(topo, initial or [[] for _ in topo.queues], per_class=per_class)
    trace = None
    if record_trace:
        init = [[(k, pid) for k, pid, _, _ in state.fifo[j]] for j in range(topo.n_queues)]
        if per_class:
            init = [[] for _ in topo.queues]
            for k, buf in enumerate(state.buffers):
                for kk, pid, _, _ in buf:
                    init[topo.class_queue[kk]].append((kk, pid))
        trace = Trace(topo, init, [], sched.discipline)
    stream = ArrivalStream(arrivals)
    plan = _Plan.of(topo)
    nj = topo.n_queues
    total = np.zeros(slots, dtype=np.int64)
    acc = np.zeros(nj, dtype=np.int64)
    qseries = np.zeros((slots - warmup, nj), dtype=np.int32) if record_queues else None
    hist: list[list[int]] = [[] for _ in topo.routes]
    for t in range(slots):
        exits, rec = step_slot(state, sched, stream(t), record_trace, plan)
        if record_trace:
            trace.records.append(rec)
        Qj = state.Qj
        total[t] = Qj.sum()
        if t >= warmup:
            acc += Qj
            if record_queues:
                qseries[t - warmup] = Qj
            for r, entered in exits:
                h = hist[r]
                d = t + 1 - entered
                if d >= len(h):
                    h.extend([0] * (d + 1 - len(h)))
                h[d] += 1
    measured = slots - warmup
    gaps = GapSummary()
    gaps.add(sched.gaps)
    stats = SimStats(topo.queues, topo.route_names, slots, warmup, measured,
                     acc / max(measured, 1), total, [np.asarray(h, dtype=np.int64) for h in hist], gaps,
                     qseries, float(np.sum(arrivals.rates)))
    return stats, trace


@dataclass(frozen=True)
class StabilityVerdict:
    label: str  # "stable", "unstable" or "inconclusive"
    slope: float  # normalized by total arrival rate
    r2: float


def detect_stability(series, arrival_rate: float) -> StabilityVerdict:
    """Classify a total-queue series by its least-squares drift.

    The slope over the second half of the series is divided by the total
    arrival rate: above 0.05 with R^2 > 0.8 is unstable, below 0.01 in
    magnitude is stable, anything else is inconclusive.
    """
    y = np.asarray(series, dtype=float)
    if len(y) < 10_000:
        raise ValueError("need at least 10^4 slots to classify")
    y = y[len(y) // 2:]
    x = np.arange(len(y), dtype=float)
    fit = np.polyfit(x, y, 1)
    resid = y - np.polyval(fit, x)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 0.0
    slope = float(fit[0]) / arrival_rate
    if slope > 0.05 and r2 > 0.8:
        label = "unstable"
    elif abs(slope) < 0.01:
        label = "stable"
    else:
        label = "inconclusive"
    return StabilityVerdict(label, slope, r2)
