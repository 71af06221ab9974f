"""Fluid model of the proportional switch and its entropy diagnostics.

Each queue holds a FIFO sequence of slugs ``[mass, composition, e]`` where the
composition is a probability vector over the classes of that queue and
``e = sum_k p_k log(p_k / a_k)`` is the slug's relative entropy per unit
mass. Nonempty queues drain at the proportional-fair rates sigma(Q). A queue
below the empty threshold forwards its inflow immediately, as far as the
capacity left over by the other queues of its block allows; whatever cannot
be forwarded is stored.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .network import OUTSIDE, Block, ScheduleSet, Topology
from .schedulers import SchedulerKind, _block_atoms, solve_block

_CLEAN = 1e-14
CLEAR_STEPS = 10


def _slug_entropy(p: np.ndarray, a: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / a[nz])))


@dataclass
class FluidState:
    """Slug contents of every queue plus cumulative class flows."""

    topo: Topology
    queues: list[deque]
    t: float = 0.0
    Ak: np.ndarray = None
    Dk: np.ndarray = None
    q0: float = 0.0

    def __post_init__(self):
        if self.Ak is None:
            self.Ak = np.zeros(self.topo.n_classes)
            self.Dk = np.zeros(self.topo.n_classes)
        if not self.q0:
            self.q0 = float(self.masses.sum())

    @classmethod
    def from_class_masses(cls, topo: Topology, masses) -> "FluidState":
        """One slug per queue, its composition proportional to the class masses."""
        m = np.asarray(masses, dtype=float)
        a = topo.class_rates
        queues = []
        for j, ks in enumerate(topo.classes_at):
            dq = deque()
            tot = m[ks].sum()
            if tot > 0:
                p = m[ks] / tot
                dq.append([tot, p, _slug_entropy(p, a[ks])])
            queues.append(dq)
        return cls(topo, queues)

    @classmethod
    def from_slugs(cls, topo: Topology, slugs) -> "FluidState":
        """``slugs[j]`` lists ``(mass, {class: weight})`` head first."""
        a = topo.class_rates
        queues = []
        for j, ks in enumerate(topo.classes_at):
            pos = {int(k): i for i, k in enumerate(ks)}
            dq = deque()
            for mass, comp in slugs[j]:
                p = np.zeros(len(ks))
                for k, w in comp.items():
                    p[pos[int(k)]] = w
                p /= p.sum()
                if mass > 0:
                    dq.append([float(mass), p, _slug_entropy(p, a[ks])])
            queues.append(dq)
        return cls(topo, queues)

    @property
    def masses(self) -> np.ndarray:
        return np.array([sum(s[0] for s in dq) for dq in self.queues])

    def class_masses(self) -> np.ndarray:
        out = np.zeros(self.topo.n_classes)
        for j, dq in enumerate(self.queues):
            ks = self.topo.classes_at[j]
            for m, p, _ in dq:
                out[ks] += m * p
        return out

    def head_composition(self, j: int) -> np.ndarray:
        return self.queues[j][0][1] if self.queues[j] else np.zeros(len(self.topo.classes_at[j]))

    def empty_threshold(self) -> float:
        return 1e-9 * self.q0 + 1e-12


@dataclass
class FluidRates:
    sigma: np.ndarray  # proportional-fair rates over the nonempty queues
    drain: np.ndarray  # drain rate of every queue (sigma, or pass-through)
    empty: np.ndarray  # boolean mask of queues below the threshold


def _spare(block: Block, local: int, used: np.ndarray) -> float:
    """Largest t with used + t e_local in the hull of the block."""
    caps = block.caps.astype(float)
    if block.kind == "box":
        return max(0.0, caps[local] - used[local])
    if block.kind == "simplex":
        nz = caps > 0
        slack = 1.0 - float(np.sum(used[nz] / caps[nz]))
        return max(0.0, caps[local] * slack)
    V = block.schedules.astype(float)
    n, d = V.shape
    # max t  s.t.  V^T lam >= used + t e_local, sum lam = 1, lam >= 0
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-V.T, np.zeros((d, 1))])
    A_ub[local, -1] = 1.0
    A_eq = np.concatenate([np.ones(n), [0.0]]).reshape(1, -1)
    res = linprog(c, A_ub=A_ub, b_ub=-used, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * n + [(0, None)],
                  method="highs")
    return max(0.0, float(res.x[-1])) if res.status == 0 else 0.0


class FluidModel:
    """Topology, schedule set and solver settings shared by every step."""

    def __init__(self, topo: Topology, S: ScheduleSet, kind: SchedulerKind = SchedulerKind()):
        self.topo, self.S, self.kind = topo, S, kind
        self.block_of = np.zeros(topo.n_queues, dtype=np.int64)
        self.local_of = np.zeros(topo.n_queues, dtype=np.int64)
        for bi, b in enumerate(S.blocks):
            self.block_of[b.queues] = bi
            self.local_of[b.queues] = np.arange(b.size)
        self.a = topo.class_rates
        self.ext = np.zeros(topo.n_classes)
        self.ext[topo.input_class] = topo.route_rates
        self.nxt = topo.next_class
        self._support: list[dict] = [{} for _ in S.blocks]

    # -- rates ---------------------------------------------------------------

    def _proportional_fair(self, q: np.ndarray) -> np.ndarray:
        """Fluid PF rates; general blocks restart Frank-Wolfe from the previous step's support."""
        sigma = np.zeros(len(q))
        for bi, b in enumerate(self.S.blocks):
            qb = q[b.queues]
            warm = None
            if b.kind == "general" and self._support[bi] and np.any(qb > 0):
                prev = self._support[bi]
                V = _block_atoms(b, qb, True)
                warm = {i: prev[row] for i, row in enumerate(map(tuple, V.tolist())) if row in prev}
            xb, atoms, w, *_ = solve_block(b, qb, self.kind, True, warm)
            sigma[b.queues] = xb
            self._support[bi] = {tuple(a): float(x) for a, x in zip(atoms.tolist(), w)}
        return sigma

    def rates(self, state: FluidState) -> FluidRates:
        topo = self.topo
        Q = state.masses
        empty = Q < state.empty_threshold()
        sigma = self._proportional_fair(np.where(empty, 0.0, Q))
        drain = np.where(empty, 0.0, sigma)
        # class outflow rates of nonempty queues: sigma_j times head composition
        out = np.zeros(topo.n_classes)
        for j in np.flatnonzero(~empty):
            out[topo.classes_at[j]] = sigma[j] * state.head_composition(j)
        fixed = out.copy()
        E = np.flatnonzero(empty)
        for _ in range(topo.n_classes + 1):  # one round per hop of the longest route
            inflow = self.ext.copy()
            has = self.nxt != OUTSIDE
            np.add.at(inflow, self.nxt[has], out[has])
            new = fixed.copy()
            used = [np.where(empty[b.queues], 0.0, sigma[b.queues]) for b in self.S.blocks]
            pt = np.zeros(topo.n_queues)
            for j in E:
                ks = topo.classes_at[j]
                lam = inflow[ks].sum()
                if lam <= 0:
                    continue
                bi, li = self.block_of[j], self.local_of[j]
                pt[j] = min(lam, _spare(self.S.blocks[bi], li, used[bi]))
                used[bi][li] += pt[j]
                new[ks] = inflow[ks] * (pt[j] / lam)
            if np.allclose(new, out, rtol=0, atol=1e-15):
                out = new
                break
            out = new
        drain[E] = pt[E]
        return FluidRates(sigma, drain, empty)

    # -- entropy -----------------------------------------------------------------

    def entropy(self, state: FluidState, sigma: np.ndarray, empty: np.ndarray) -> tuple[float, float, float]:
        """(H, L, M) with L over nonempty queues and M over all slugs."""
        Q = state.masses
        nz = (~empty) & (Q > 0)
        L = float(np.sum(Q[nz] * np.log(sigma[nz])))
        M = float(sum(m * e for dq in state.queues for m, _, e in dq))
        return L + M, L, M

    # -- one Euler step ---------------------------------------------------------

    def _clearing_step(self, state: FluidState, h: float) -> dict | None:
        """Empty the network when its content is within reach of the capacity.

        Each class would have to carry its arrival rate plus all content at or
        upstream of it spread over CLEAR_STEPS steps. When those queue rates
        lie in <S> the remaining content leaves in this step and all inflow is
        forwarded. This ends the O(h) residue explicit Euler otherwise keeps
        cycling between neighbouring queues.
        """
        topo = self.topo
        Q = state.masses
        span = CLEAR_STEPS * h
        if Q.sum() <= 0 or Q.sum() > span * topo.n_queues * self.S.sigma_max:
            return None
        content = state.class_masses()
        upstream = content.copy()
        for ks in topo.routes:
            for prev, k in zip(ks[:-1], ks[1:]):
                upstream[k] += upstream[prev]
        x = np.bincount(topo.queue_of_class, weights=self.a + upstream / span, minlength=topo.n_queues)
        if not self.S.hull_contains(x, tol=0.0):
            return None
        out = self.a * h + upstream
        arrived = out - content
        for dq in state.queues:
            dq.clear()
        state.Ak += arrived
        state.Dk += out
        state.t += h
        return {"arrived": arrived, "out": out}

    def step(self, state: FluidState, h: float, rates: FluidRates | None = None) -> dict:
        """Advance ``state`` by ``h``; returns the masses moved in the step."""
        if h <= 0:
            raise ValueError("step size must be positive")
        topo = self.topo
        r = rates or self.rates(state)
        nk, nj = topo.n_classes, topo.n_queues
        cleared = self._clearing_step(state, h)
        if cleared is not None:
            return cleared
        out = np.zeros(nk)
        # 1. drain nonempty queues from the head; clear residue in empty ones
        for j in range(nj):
            dq = state.queues[j]
            if not dq:
                continue
            ks = topo.classes_at[j]
            budget = math.inf if r.empty[j] else h * r.drain[j]
            while dq and budget > 0:
                m, p, _ = dq[0]
                take = min(m, budget)
                out[ks] += take * p
                budget -= take
                if take >= m * (1 - 1e-15):
                    dq.popleft()
                else:
                    dq[0][0] = m - take
            if dq and sum(s[0] for s in dq) < _CLEAN * max(state.q0, 1.0):
                for m, p, _ in dq:
                    out[ks] += m * p
                dq.clear()
        # 2. route drained mass and exogenous inflow; empty queues forward
        pending = self.ext * h
        has = self.nxt != OUTSIDE
        np.add.at(pending, self.nxt[has], out[has])
        arrived = pending.copy()
        stay = np.zeros(nk)
        budget = np.where(r.empty, h * r.drain, 0.0)
        for _ in range(max(4 * nj + 4, nk + 1)):
            moved = np.zeros(nk)
            for j in np.flatnonzero(r.empty):
                ks = topo.classes_at[j]
                lam = pending[ks].sum()
                if lam <= 0:
                    continue
                passed = min(lam, budget[j])
                frac = passed / lam
                budget[j] -= passed
                moved[ks] += pending[ks] * frac
                stay[ks] += pending[ks] * (1 - frac)
                pending[ks] = 0.0
            if not moved.any():
                break
            out += moved
            fwd = np.zeros(nk)
            np.add.at(fwd, self.nxt[has], moved[has])
            arrived += fwd
            pending += fwd
        stay += pending
        # 3. append what stays, one merged slug per queue
        for j in range(nj):
            ks = topo.classes_at[j]
            m = stay[ks].sum()
            if m > 0:
                p = stay[ks] / m
                state.queues[j].append([m, p, _slug_entropy(p, self.a[ks])])
        state.Ak += arrived
        state.Dk += out
        state.t += h
        return {"arrived": arrived, "out": out}


@dataclass
class Trajectory:
    """Sampled fluid trajectory; row ``n`` describes time ``t[n]``."""

    topo: Topology
    h: float
    q0: float
    t: np.ndarray
    Q: np.ndarray
    sigma: np.ndarray
    H: np.ndarray
    L: np.ndarray
    M: np.ndarray
    A_rate: np.ndarray  # per-step queue inflow rate A'_j
    D_rate: np.ndarray  # per-step queue outflow rate D'_j
    exit_rate: np.ndarray  # per-step route departure rate D'_r
    Dk_increasing: np.ndarray  # every class had positive outflow in the step
    drain_time: float | None
    mass_threshold: float
    mass_error: float = 0.0

    def write_csv(self, path: str | Path) -> None:
        names = self.topo.queues
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"Q_{q}" for q in names] + [f"sigma_{q}" for q in names] + ["H", "L", "M"])
            for n in range(len(self.t)):
                w.writerow([f"{self.t[n]:.9g}"] + [f"{v:.12g}" for v in self.Q[n]] + [f"{v:.12g}" for v in self.sigma[n]]
                           + [f"{self.H[n]:.12g}", f"{self.L[n]:.12g}", f"{self.M[n]:.12g}"])


def default_step(q0: float) -> float:
    return 1e-3 * (q0 + 1.0)


def integrate_fluid(initial: FluidState, S: ScheduleSet, h: float | None = None, horizon: float = 10.0,
                    kind: SchedulerKind = SchedulerKind(), stop_after_drain: float | None = None) -> Trajectory:
    """Explicit Euler integration; ``initial`` is advanced in place.

    With ``stop_after_drain`` set, integration ends that long after the total
    mass first falls below the zero threshold.
    """
    model = FluidModel(initial.topo, S, kind)
    state = initial
    q0 = state.q0
    h = default_step(q0) if h is None else h
    steps = int(round(horizon / h))
    thr = 1e-6 * q0
    topo = state.topo
    rows_Q, rows_s, Hs, Ls, Ms, ts = [], [], [], [], [], []
    Ar, Dr, Er, inc = [], [], [], []
    drain_time = None
    ext_total = float(np.sum(topo.route_rates))
    mass_err = 0.0
    end = steps
    for n in range(steps + 1):
        rates = model.rates(state)
        H, L, M = model.entropy(state, rates.sigma, rates.empty)
        Qn = state.masses
        ts.append(state.t)
        rows_Q.append(Qn)
        rows_s.append(rates.drain)
        Hs.append(H), Ls.append(L), Ms.append(M)
        if drain_time is None and Qn.sum() < thr:
            drain_time = state.t
            if stop_after_drain is not None:
                end = min(end, n + int(round(stop_after_drain / h)))
        if n >= end:
            break
        before = Qn.sum()
        moved = model.step(state, h, rates)
        exits = moved["out"][topo.output_class]
        after = state.masses.sum()
        mass_err = max(mass_err, abs((after - before) - (ext_total * h - exits.sum())) / max(q0, 1.0))
        Ar.append(np.bincount(topo.queue_of_class, weights=moved["arrived"], minlength=topo.n_queues) / h)
        Dr.append(np.bincount(topo.queue_of_class, weights=moved["out"], minlength=topo.n_queues) / h)
        Er.append(exits / h)
        inc.append(bool(np.all(moved["out"] > 0)))
    return Trajectory(topo, h, q0, np.array(ts), np.array(rows_Q), np.array(rows_s), np.array(Hs), np.array(Ls),
                      np.array(Ms), np.array(Ar), np.array(Dr), np.array(Er), np.array(inc, dtype=bool),
                      drain_time, thr, mass_err)


def fluid_rates(state: FluidState, S: ScheduleSet, kind: SchedulerKind = SchedulerKind()) -> FluidRates:
    return FluidModel(state.topo, S, kind).rates(state)


def fluid_step(state: FluidState, S: ScheduleSet, h: float, kind: SchedulerKind = SchedulerKind()) -> dict:
    return FluidModel(state.topo, S, kind).step(state, h)


def entropy_H(state: FluidState, S: ScheduleSet, kind: SchedulerKind = SchedulerKind()) -> tuple[float, float, float]:
    model = FluidModel(state.topo, S, kind)
    r = model.rates(state)
    return model.entropy(state, r.sigma, r.empty)


def _xlogx_ratio(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x log(x / y) with 0 log 0 = 0."""
    out = np.zeros_like(x)
    nz = x > 0
    with np.errstate(divide="ignore"):
        out[nz] = x[nz] * np.log(x[nz] / y[nz])
    return out


@dataclass
class EntropyReport:
    start: int | None  # first step index past the transient threshold
    p95_discrepancy: float
    max_discrepancy: float
    max_increase: float
    monotone: bool
    checked: int


def entropy_derivative_rhs(traj: Trajectory) -> np.ndarray:
    """Right-hand side of the entropy derivative identity for every step."""
    a_r = traj.topo.route_rates
    Dr = traj.exit_rate
    route_term = _xlogx_ratio(Dr, np.broadcast_to(a_r, Dr.shape)).sum(axis=1)
    queue_term = _xlogx_ratio(traj.A_rate, traj.D_rate).sum(axis=1)
    return -route_term - queue_term


def transient_start(traj: Trajectory, run: int = 100) -> int | None:
    streak = 0
    for n, ok in enumerate(traj.Dk_increasing):
        streak = streak + 1 if ok else 0
        if streak >= run:
            return n + 1
    return None


def verify_entropy_derivative(traj: Trajectory, run: int = 100, until_drain: bool = True,
                              t_start: float | None = None, t_end: float | None = None) -> EntropyReport:
    """Compare finite-difference H' with the identity and check H'(t) <= 0.

    Steps before the transient threshold are skipped, and so are steps after
    the zero threshold when ``until_drain`` is set (H is then 0). ``t_start``
    and ``t_end`` narrow the window further, which lets runs with different
    step sizes be compared over the same stretch of time.
    """
    n0 = transient_start(traj, run)
    steps = len(traj.A_rate)
    if n0 is None or n0 >= steps:
        return EntropyReport(n0, math.nan, math.nan, math.nan, True, 0)
    n1 = steps
    if until_drain and traj.drain_time is not None:
        n1 = min(n1, int(np.searchsorted(traj.t, traj.drain_time)))
    if t_start is not None:
        n0 = max(n0, int(np.searchsorted(traj.t, t_start - 1e-12)))
    if t_end is not None:
        n1 = min(n1, int(np.searchsorted(traj.t, t_end - 1e-12)))
    if n1 <= n0:
        return EntropyReport(n0, math.nan, math.nan, math.nan, True, 0)
    fd = np.diff(traj.H)[n0:n1] / traj.h
    rhs = entropy_derivative_rhs(traj)[n0:n1]
    disc = np.abs(fd - rhs)
    inc = np.diff(traj.H)[n0:n1]
    slack = 1e-6 * traj.q0
    return EntropyReport(n0, float(np.quantile(disc, 0.95)), float(disc.max()), float(inc.max()),
                         bool(inc.max() <= slack), len(disc))


def transient_time(traj: Trajectory, run: int = 100) -> float | None:
    n = transient_start(traj, run)
    return None if n is None else float(traj.t[n])


def log_bound_holds(x, y, K) -> np.ndarray:
    """Slack of y log(y/x) - (y - x) - (y - x)^2 / (2K) (non-negative when it holds)."""
    x, y, K = (np.asarray(v, dtype=float) for v in (x, y, K))
    return y * np.log(y / x) - (y - x) - (y - x) ** 2 / (2 * K)
