"""Simulation traces and the FIFO network-equation verifier.

A trace stores the initial queue contents and, for every slot, the packets
served, the packets appended to queues (in append order), the packets leaving
the network and the class-level queue lengths at the end of the slot. The
verifier rebuilds the cumulative processes A_k, D_k from those events alone
and checks them against the network equations.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .network import OUTSIDE, ScheduleSet, Topology

WINDOWS = (1, 10, 100)


@dataclass
class SlotRecord:
    """Events of one slot; ``slot`` is the time index after the slot ends."""

    slot: int
    schedule: np.ndarray
    served: list[tuple[int, int, int]]  # (queue, class, packet id), service order
    arrivals: list[tuple[int, int, int, bool]]  # (queue, class, packet id, external)
    exits: list[tuple[int, int]]  # (route, packet id)
    Qk: np.ndarray


@dataclass
class Trace:
    topo: Topology
    initial: list[list[tuple[int, int]]]  # per queue: (class, packet id), head first
    records: list[SlotRecord] = field(default_factory=list)
    discipline: str = "fifo"  # "fifo" or "per_class"

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class TraceReport:
    ok: bool
    equation: str | None = None
    slot: int | None = None
    detail: str = ""
    slots_checked: int = 0

    def __bool__(self) -> bool:
        return self.ok


class _Fail(Exception):
    def __init__(self, equation: str, slot: int, detail: str):
        super().__init__(detail)
        self.equation, self.slot, self.detail = equation, slot, detail


def verify_trace(trace: Trace, S: ScheduleSet, windows: Sequence[int] = WINDOWS, tol: float = 1e-9) -> TraceReport:
    """Check a trace against the FIFO network equations, slot by slot.

    Returns the first violation found (earliest slot; within a slot, in the
    order Incr, gammak, Dk, Ak, ADk, ADr, Dcov).
    """
    topo = trace.topo
    nk, nj = topo.n_classes, topo.n_queues
    cq = topo.queue_of_class
    prev = topo.prev_class
    per_class = trace.discipline == "per_class"

    Qk0 = np.zeros(nk, dtype=np.int64)
    # arrival-order sequences: per queue (fifo) or per class (per_class)
    pending: list[deque] = [deque() for _ in range(nk if per_class else nj)]
    for j, seq in enumerate(trace.initial):
        for k, pid in seq:
            if cq[k] != j:
                return TraceReport(False, "gammak", 0, f"class {k} listed at queue {j}")
            Qk0[k] += 1
            pending[k if per_class else j].append((k, pid))

    A = np.zeros(nk, dtype=np.int64)
    D = np.zeros(nk, dtype=np.int64)
    ext = np.zeros(topo.n_routes, dtype=np.int64)
    out = np.zeros(topo.n_routes, dtype=np.int64)
    Dj_hist = [np.zeros(nj, dtype=np.int64)]
    hull_cache: dict[tuple, bool] = {}
    non_input = prev != OUTSIDE

    try:
        for rec in trace.records:
            t = rec.slot
            # ---- apply events -------------------------------------------------
            served_j = np.zeros(nj, dtype=np.int64)
            order_ok = True
            bad = ""
            for j, k, pid in rec.served:
                if cq[k] != j:
                    raise _Fail("gammak", t, f"class {k} served at foreign queue {j}")
                D[k] += 1
                served_j[j] += 1
                seq = pending[k if per_class else j]
                # FIFO: service must consume the arrival sequence from its head
                if not seq or seq[0] != (k, pid):
                    if order_ok:
                        order_ok, bad = False, f"packet {pid} (class {k}) served out of order at queue {j}"
                else:
                    seq.popleft()
            for j, k, pid, external in rec.arrivals:
                if cq[k] != j:
                    raise _Fail("gammak", t, f"class {k} appended at foreign queue {j}")
                A[k] += 1
                if external:
                    ext[topo.class_route[k]] += 1
                pending[k if per_class else j].append((k, pid))
            for r, pid in rec.exits:
                out[r] += 1

            # ---- eq:Incr ------------------------------------------------------
            expect = Qk0 + A - D
            if np.any(expect < 0):
                raise _Fail("Incr", t, "negative queue length implied by counters")
            if not np.array_equal(np.asarray(rec.Qk), expect):
                k = int(np.flatnonzero(np.asarray(rec.Qk) != expect)[0])
                raise _Fail("Incr", t, f"class {k}: recorded Q={int(rec.Qk[k])}, Q(0)+A-D={int(expect[k])}")
            # ---- eq:gammak: service never outruns the queue's content ---------
            Qj0, Aj, Dj = (np.bincount(cq, weights=v, minlength=nj) for v in (Qk0, A, D))
            if np.any(Dj > Qj0 + Aj):
                raise _Fail("gammak", t, "more departures than content")
            # ---- eq:Dk / eq:Ak: FIFO consistency ------------------------------
            if not order_ok:
                raise _Fail("Dk", t, bad)
            if per_class:
                for k in range(nk):
                    if len(pending[k]) != expect[k]:
                        raise _Fail("Ak", t, f"class {k} arrival sequence inconsistent")
            else:
                for j in range(nj):
                    if len(pending[j]) != Qj0[j] + Aj[j] - Dj[j]:
                        raise _Fail("Ak", t, f"queue {j} arrival sequence inconsistent")
            # ---- eq:ADk -------------------------------------------------------
            if not np.array_equal(A[non_input], D[prev[non_input]]):
                k = int(np.flatnonzero(non_input)[np.flatnonzero(A[non_input] != D[prev[non_input]])[0]])
                raise _Fail("ADk", t, f"A_k != D_b(k) for class {k}")
            # ---- eq:ADr -------------------------------------------------------
            if not np.array_equal(ext, A[topo.input_class]):
                raise _Fail("ADr", t, "route arrivals differ from input-class arrivals")
            if not np.array_equal(out, D[topo.output_class]):
                raise _Fail("ADr", t, "route departures differ from output-class departures")
            # ---- eq:Dcov ------------------------------------------------------
            Dj_now = Dj.astype(np.int64)
            Dj_hist.append(Dj_now)
            for w in windows:
                if len(Dj_hist) > w:
                    diff = Dj_now - Dj_hist[-1 - w]
                    key = (w, diff.tobytes())
                    inside = hull_cache.get(key)
                    if inside is None:
                        inside = S.hull_contains(diff / w, tol)
                        hull_cache[key] = inside
                    if not inside:
                        raise _Fail("Dcov", t, f"window {w}: rate {(diff / w).tolist()} outside hull")
            if len(Dj_hist) > max(windows) + 1:
                Dj_hist.pop(0)
    except _Fail as f:
        return TraceReport(False, f.equation, f.slot, f.detail, f.slot)
    return TraceReport(True, slots_checked=len(trace.records))


def write_trace_csv(trace: Trace, path: str | Path) -> None:
    """Columns: slot, queue, Q_j, served, arrivals (one row per slot and queue)."""
    topo = trace.topo
    cq = topo.queue_of_class
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "queue", "Q_j", "served", "arrivals"])
        for rec in trace.records:
            Qj = np.bincount(cq, weights=rec.Qk, minlength=topo.n_queues).astype(np.int64)
            served = np.zeros(topo.n_queues, dtype=np.int64)
            arr = np.zeros(topo.n_queues, dtype=np.int64)
            for j, _, _ in rec.served:
                served[j] += 1
            for j, _, _, _ in rec.arrivals:
                arr[j] += 1
            for j, name in enumerate(topo.queues):
                w.writerow([rec.slot, name, int(Qj[j]), int(served[j]), int(arr[j])])


def write_trace_jsonl(trace: Trace, path: str | Path) -> None:
    """Full event trace: a header line, then one JSON object per slot."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"discipline": trace.discipline, "initial": trace.initial}) + "\n")
        for r in trace.records:
            fh.write(json.dumps({"slot": r.slot, "schedule": [int(v) for v in r.schedule],
                                 "served": r.served, "arrivals": r.arrivals, "exits": r.exits,
                                 "Qk": [int(v) for v in r.Qk]}) + "\n")


def read_trace_jsonl(path: str | Path, topo: Topology) -> Trace:
    with open(path) as fh:
        head = json.loads(fh.readline())
        initial = [[tuple(p) for p in q] for q in head["initial"]]
        records = []
        for line in fh:
            d = json.loads(line)
            records.append(SlotRecord(d["slot"], np.asarray(d["schedule"], dtype=np.int64),
                                      [tuple(e) for e in d["served"]],
                                      [(j, k, pid, bool(x)) for j, k, pid, x in d["arrivals"]],
                                      [tuple(e) for e in d["exits"]], np.asarray(d["Qk"], dtype=np.int64)))
    return Trace(topo, initial, records, head["discipline"])
