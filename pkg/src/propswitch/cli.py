"""Command line: ``propswitch {simulate,fluid,experiment,verify-trace}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .experiments import ExperimentConfig, emit_outputs, run_linear_experiment, run_tree_experiment
from .fluid import FluidState, default_step, integrate_fluid, verify_entropy_derivative
from .schedulers import SchedulerKind
from .sim import ArrivalProcess, run_simulation
from .trace import read_trace_jsonl, verify_trace, write_trace_csv, write_trace_jsonl


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="propswitch", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON network configuration")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out", help="output directory")

    s = sub.add_parser("simulate", help="run the packet-level simulator")
    common(s)
    s.add_argument("--scheduler", default="ps", help="ps, bp or mw")
    s.add_argument("--slots", type=int, default=100_000)
    s.add_argument("--warmup", type=int, default=None)
    s.add_argument("--trace", action="store_true", help="also export the slot trace (CSV and JSONL)")

    f = sub.add_parser("fluid", help="integrate the fluid model and report entropy diagnostics")
    common(f)
    f.add_argument("--h", type=float, default=None, help="Euler step")
    f.add_argument("--horizon", type=float, default=None)

    e = sub.add_parser("experiment", help="run an experiment preset")
    common(e, config_required=False)
    e.add_argument("--preset", choices=["linear", "tree"], help="used when no config is given")
    e.add_argument("--scheduler", default=None, help="comma-separated scheduler list")
    e.add_argument("--slots", type=int, default=None)

    v = sub.add_parser("verify-trace", help="check a trace against the network equations")
    common(v)
    v.add_argument("--trace", default=None, help="JSONL trace; simulated afresh when omitted")
    v.add_argument("--scheduler", default="ps")
    v.add_argument("--slots", type=int, default=10_000)
    return p


def _simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arrivals = ArrivalProcess(cfg.topo.rates, cfg.arrivals, args.seed)
    stats, trace = run_simulation(cfg.topo, cfg.S, SchedulerKind(args.scheduler), arrivals, args.slots, args.warmup,
                                  args.seed, record_trace=args.trace)
    stats.write_csv(out / "stats.csv")
    if trace is not None:
        write_trace_csv(trace, out / "trace.csv")
        write_trace_jsonl(trace, out / "trace.jsonl")
    print(f"mean total queue {stats.mean_total:.6f} over {stats.measured_slots} slots")
    return 0


def _fluid(args) -> int:
    cfg = load_config(args.config)
    topo = cfg.topo
    spec = cfg.fluid
    init = spec.get("initial")
    if init is None:
        masses = np.ones(topo.n_classes) / topo.n_classes
    else:
        idx = {n: k for k, n in enumerate(topo.class_names)}
        masses = np.zeros(topo.n_classes)
        for name, m in init.items():
            if name not in idx:
                raise ConfigError(f"fluid.initial: unknown class {name!r}")
            masses[idx[name]] = float(m)
    state = FluidState.from_class_masses(topo, masses)
    h = args.h or spec.get("h") or default_step(state.q0)
    horizon = args.horizon or spec.get("horizon") or 20.0 * (state.q0 + 1.0)
    traj = integrate_fluid(state, cfg.S, h, horizon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj.write_csv(out / "trajectory.csv")
    rep = verify_entropy_derivative(traj)
    drain = "not reached" if traj.drain_time is None else f"{traj.drain_time:.6f}"
    print(f"drain time {drain}; min H {traj.H.min():.3e}; H non-increasing {rep.monotone}; "
          f"p95 |dH/dt - identity| {rep.p95_discrepancy:.3e}")
    return 0


def _experiment(args) -> int:
    spec = {}
    if args.config:
        spec = dict(load_config(args.config).experiment)
        if not spec:
            raise ConfigError("configuration has no 'experiment' section")
    elif args.preset:
        spec = {"name": args.preset}
    else:
        raise ConfigError("give --config or --preset")
    if args.scheduler:
        spec["schedulers"] = args.scheduler.split(",")
    if args.slots:
        spec["slots"] = args.slots
    spec["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(spec)
    if cfg.name == "linear":
        res = run_linear_experiment(cfg.J, cfg.a, cfg.schedulers, cfg.slots, cfg.trials, cfg.seed, cfg.arrivals,
                                    cfg.profile_J or None, cfg.warmup, cfg.workers)
    elif cfg.name == "tree":
        res = run_tree_experiment(cfg.d, cfg.D, cfg.delta, cfg.loads, cfg.schedulers, cfg.slots, cfg.trials, cfg.seed,
                                  cfg.arrivals, cfg.warmup, cfg.workers)
    else:
        raise ConfigError(f"unknown experiment {cfg.name!r}")
    for path in emit_outputs([res], args.out):
        print(path)
    return 0


def _verify(args) -> int:
    cfg = load_config(args.config)
    if args.trace:
        trace = read_trace_jsonl(args.trace, cfg.topo)
    else:
        _, trace = run_simulation(cfg.topo, cfg.S, SchedulerKind(args.scheduler),
                                  ArrivalProcess(cfg.topo.rates, cfg.arrivals, args.seed), args.slots, 0, args.seed,
                                  record_trace=True)
    rep = verify_trace(trace, cfg.S)
    if rep.ok:
        print(f"ok: {rep.slots_checked} slots satisfy all network equations")
        return 0
    print(f"violation of eq:{rep.equation} at slot {rep.slot}: {rep.detail}")
    return 1


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"simulate": _simulate, "fluid": _fluid, "experiment": _experiment, "verify-trace": _verify}
    try:
        return handlers[args.verb](args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
