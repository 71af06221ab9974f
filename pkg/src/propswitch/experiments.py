"""Experiment presets: linear-network delay scaling and joined-tree stability."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .builders import build_joined_tree_network, build_linear_network, tree_rate_for_load
from .network import ScheduleSet, Topology
from .schedulers import Policy, SchedulerKind
from .sim import ArrivalProcess, SimStats, detect_stability, merge_stats, run_simulation


def trial_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, np.uint32)[0])


@dataclass
class ExperimentConfig:
    name: str = "linear"
    J: tuple[int, ...] = (8, 16, 32, 64)
    a: float = 0.6
    profile_J: int = 20
    d: int = 4
    D: int = 4
    delta: float = 0.4142
    loads: tuple[float, ...] = (0.3, 0.6, 0.8, 0.9, 0.95)
    schedulers: tuple[str, ...] = ("ps", "bp", "mw")
    arrivals: str = "bernoulli"
    slots: int = 200_000
    warmup: int | None = None
    trials: int = 1
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.name == "tree" and any(not 0 < x < 1 for x in self.loads):
            raise ValueError("load fractions must lie in (0, 1)")
        self.J = tuple(int(j) for j in self.J)
        self.loads = tuple(float(x) for x in self.loads)
        self.schedulers = tuple(Policy.parse(s).value for s in self.schedulers)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        return cls(**d)


def confidence_interval(trial_means: Sequence[float], series: np.ndarray | None = None, batches: int = 10) -> float:
    """Half-width of a 95% t-interval over trials, or over batch means of one run."""
    x = np.asarray(trial_means, dtype=float)
    if len(x) < 2 and series is not None and len(series) >= batches:
        x = np.array([b.mean() for b in np.array_split(np.asarray(series, dtype=float), batches)])
    if len(x) < 2:
        return float("nan")
    return float(sps.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / np.sqrt(len(x)))


def _one_run(args):
    topo, S, policy, kind, slots, warmup, seed = args
    st, _ = run_simulation(topo, S, SchedulerKind(policy), ArrivalProcess(topo.rates, kind, seed), slots, warmup, seed)
    st.total_series = st.total_series.astype(np.int32)
    return st


def run_trials(topo: Topology, S: ScheduleSet, policy: str, cfg: ExperimentConfig, key: tuple[int, ...]) -> list[SimStats]:
    """Independent runs, merged in trial order whatever the worker count."""
    jobs = [(topo, S, policy, cfg.arrivals, cfg.slots, cfg.warmup, trial_seed(cfg.seed, *key, i))
            for i in range(cfg.trials)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            return list(ex.map(_one_run, jobs))
    return [_one_run(j) for j in jobs]


def growth_exponent(J: Sequence[int], totals: Sequence[float]) -> float:
    """Slope of log(total) against log(J)."""
    return float(np.polyfit(np.log(J), np.log(totals), 1)[0])


@dataclass
class LinearResult:
    a: float
    arrivals: str
    rows: list[tuple[int, str, float, float]] = field(default_factory=list)  # J, scheduler, mean, ci95
    profiles: dict[str, np.ndarray] = field(default_factory=dict)  # scheduler -> per-queue mean at profile_J
    profile_ci: dict[str, np.ndarray] = field(default_factory=dict)
    exponents: dict[str, float] = field(default_factory=dict)


def run_linear_experiment(J: Sequence[int] = (8, 16, 32, 64), a: float = 0.6, schedulers: Sequence[str] = ("ps", "bp"),
                          slots: int = 200_000, trials: int = 1, seed: int = 0, arrivals: str = "bernoulli",
                          profile_J: int | None = 20, warmup: int | None = None, workers: int = 1) -> LinearResult:
    """Mean total queue per (J, scheduler), the per-queue profile at ``profile_J``
    and the log-log growth exponent of the total in J."""
    cfg = ExperimentConfig("linear", tuple(J), a, profile_J or 0, schedulers=tuple(schedulers), arrivals=arrivals,
                           slots=slots, warmup=warmup, trials=trials, seed=seed, workers=workers)
    res = LinearResult(a, arrivals)
    sizes = sorted(set(cfg.J) | ({profile_J} if profile_J else set()))
    for policy in cfg.schedulers:
        pidx = list(Policy).index(Policy(policy))
        for n in sizes:
            topo, S = build_linear_network(n, a)
            runs = run_trials(topo, S, policy, cfg, (1, n, pidx))
            merged = merge_stats(runs)
            warm = runs[0].warmup
            ci = confidence_interval([r.mean_total for r in runs], runs[0].total_series[warm:])
            if n in cfg.J:
                res.rows.append((n, policy, merged.mean_total, ci))
            if n == profile_J:
                res.profiles[policy] = merged.mean_queue
                if len(runs) > 1:
                    res.profile_ci[policy] = np.array(
                        [confidence_interval([r.mean_queue[j] for r in runs]) for j in range(n)])
        pts = [(n, m) for n, p, m, _ in res.rows if p == policy]
        if len(pts) >= 2:
            res.exponents[policy] = growth_exponent([n for n, _ in pts], [m for _, m in pts])
    res.rows.sort(key=lambda r: (r[0], r[1]))
    return res


@dataclass
class TreeResult:
    d: int
    D: int
    delta: float
    rows: list[tuple[float, str, float, float, str, float]] = field(default_factory=list)
    # load, scheduler, mean total, ci95, stability label, normalized slope


def run_tree_experiment(d: int = 4, D: int = 4, delta: float = 0.4142, loads: Sequence[float] = (0.3, 0.6, 0.8, 0.9, 0.95),
                        schedulers: Sequence[str] = ("ps", "bp", "mw"), slots: int = 200_000, trials: int = 1,
                        seed: int = 0, arrivals: str = "bernoulli", warmup: int | None = None,
                        workers: int = 1) -> TreeResult:
    """Time-average total queue and a drift-based stability label per (load, scheduler).

    Runs are classified on the full total-queue series of each trial; a load
    is labelled unstable if any trial is.
    """
    cfg = ExperimentConfig("tree", d=d, D=D, delta=delta, loads=tuple(loads), schedulers=tuple(schedulers),
                           arrivals=arrivals, slots=slots, warmup=warmup, trials=trials, seed=seed, workers=workers)
    res = TreeResult(d, D, delta)
    for li, load in enumerate(cfg.loads):
        topo, S = build_joined_tree_network(d, D, delta, tree_rate_for_load(load, delta))
        for policy in cfg.schedulers:
            runs = run_trials(topo, S, policy, cfg, (2, li, list(Policy).index(Policy(policy))))
            verdicts = [detect_stability(r.total_series, r.arrival_rate) for r in runs]
            labels = {v.label for v in verdicts}
            label = "unstable" if "unstable" in labels else "stable" if labels == {"stable"} else "inconclusive"
            merged = merge_stats(runs)
            ci = confidence_interval([r.mean_total for r in runs], runs[0].total_series[runs[0].warmup:])
            slope = max(v.slope for v in verdicts)
            res.rows.append((load, policy, merged.mean_total, ci, label, slope))
    res.rows.sort(key=lambda r: (r[0], r[1]))
    return res


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.6f}"


def emit_outputs(results: Sequence[LinearResult | TreeResult], directory: str | Path) -> list[Path]:
    """Write one CSV per experiment plus ``plot_data.csv`` (long format).

    Rows are sorted and numbers use fixed formatting, so identical results give
    byte-identical files.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        raise NotADirectoryError(out)
    written: list[Path] = []
    plot: list[tuple[str, str, str, str, str]] = []

    def write(name: str, header: list[str], rows: list[list[str]]) -> None:
        path = out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    for res in results:
        if isinstance(res, LinearResult):
            tag = "" if res.arrivals == "bernoulli" else f"_{res.arrivals}"
            write(f"linear_totals{tag}.csv", ["J", "scheduler", "mean_total_queue", "ci95"],
                  [[str(J), s, _fmt(m), _fmt(c)] for J, s, m, c in res.rows])
            prof = []
            for s in sorted(res.profiles):
                ci = res.profile_ci.get(s)
                for j, v in enumerate(res.profiles[s]):
                    prof.append([str(len(res.profiles[s])), s, str(j + 1), _fmt(v),
                                 _fmt(ci[j]) if ci is not None else "nan"])
                    plot.append((f"linear_profile{tag}", s, str(j + 1), _fmt(v),
                                 _fmt(ci[j]) if ci is not None else "nan"))
            write(f"linear_profile{tag}.csv", ["J", "scheduler", "position", "mean_queue", "ci95"], prof)
            if res.exponents:
                write(f"linear_exponents{tag}.csv", ["scheduler", "exponent"],
                      [[s, _fmt(e)] for s, e in sorted(res.exponents.items())])
            plot += [(f"linear_totals{tag}", s, str(J), _fmt(m), _fmt(c)) for J, s, m, c in res.rows]
        elif isinstance(res, TreeResult):
            write("tree_stability.csv", ["load", "scheduler", "mean_total_queue", "ci95", "stability", "drift"],
                  [[f"{l:.4f}", s, _fmt(m), _fmt(c), lab, _fmt(sl)] for l, s, m, c, lab, sl in res.rows])
            plot += [("tree_stability", s, f"{l:.4f}", _fmt(m), _fmt(c)) for l, s, m, c, _, _ in res.rows]
        else:
            raise TypeError(f"unsupported result {type(res).__name__}")
    write("plot_data.csv", ["experiment", "scheduler", "x", "y", "ci"], [list(r) for r in sorted(plot)])
    return written
