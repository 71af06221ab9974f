"""JSON network configuration.

Schema::

    {
      "queues":  ["q1", "q2"],
      "routes":  [{"name": "r1", "rate": 0.3}],
      "classes": [{"name": "k1", "queue": "q1", "route": "r1", "position": 0},
                  {"name": "k2", "queue": "q2", "route": "r1", "position": 1}],
      "schedules": [[1, 0], [0, 1]],
      "arrivals": "bernoulli",
      "nodes": {"q1": "n1", "q2": "n1"},
      "fluid": {"initial": {"k1": 0.6, "k2": 0.4}, "h": 0.002, "horizon": 10},
      "experiment": {...}
    }

``schedules`` is either a list of vectors indexed like ``queues`` or
``{"blocks": [{"queues": [...], "schedules": [[...], ...]}, ...]}`` for a
product set. Either way the downward closure is taken on load. ``arrivals``,
``nodes``, ``fluid`` and ``experiment`` are optional; class names default to
``route:position``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .network import ScheduleSet, Topology, monotone_closure, validate_topology


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    topo: Topology
    S: ScheduleSet
    arrivals: str = "bernoulli"
    fluid: dict[str, Any] = field(default_factory=dict)
    experiment: dict[str, Any] = field(default_factory=dict)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigError(f"{where}: missing key {key!r}")
    return obj[key]


def parse_config(doc: dict[str, Any]) -> NetworkConfig:
    """Build topology and schedule set from an already-decoded document."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    experiment = doc.get("experiment", {}) or {}
    if "queues" not in doc:
        if experiment:
            return NetworkConfig(None, None, doc.get("arrivals", "bernoulli"), doc.get("fluid", {}) or {}, experiment)
        raise ConfigError("missing key 'queues'")
    queues = [str(q) for q in doc["queues"]]
    qidx = {q: i for i, q in enumerate(queues)}
    if len(qidx) != len(queues):
        raise ConfigError("duplicate queue name")
    routes = _require(doc, "routes", "config")
    rnames = [str(r.get("name", f"r{i}")) for i, r in enumerate(routes)]
    ridx = {r: i for i, r in enumerate(rnames)}
    rates = [float(_require(r, "rate", f"route {rnames[i]}")) for i, r in enumerate(routes)]
    staged: list[list[tuple[int, str, int]]] = [[] for _ in routes]
    for c in _require(doc, "classes", "config"):
        q = _require(c, "queue", "class")
        r = _require(c, "route", "class")
        if q not in qidx:
            raise ConfigError(f"class references unknown queue {q!r}")
        if r not in ridx:
            raise ConfigError(f"class references unknown route {r!r}")
        pos = int(_require(c, "position", "class"))
        staged[ridx[r]].append((pos, str(c.get("name", f"{r}:{pos}")), qidx[q]))
    class_queue, class_names, route_classes = [], [], []
    for r, items in enumerate(staged):
        items.sort()
        if [p for p, _, _ in items] != list(range(len(items))):
            raise ConfigError(f"route {rnames[r]}: positions must be 0..n-1 without gaps")
        ks = []
        for _, name, j in items:
            ks.append(len(class_queue))
            class_queue.append(j)
            class_names.append(name)
        route_classes.append(tuple(ks))
    nodes = doc.get("nodes") or {}
    node_of = tuple(str(nodes.get(q, q)) for q in queues)
    topo = Topology(tuple(queues), tuple(class_queue), tuple(route_classes), tuple(rates), tuple(class_names),
                    tuple(rnames), node_of)
    report = validate_topology(topo)
    if not report.ok:
        raise ConfigError("invalid topology: " + "; ".join(report.violations))
    S = parse_schedules(_require(doc, "schedules", "config"), queues)
    problems = S.check()
    if problems:
        raise ConfigError("invalid schedule set: " + "; ".join(problems))
    return NetworkConfig(topo, S, str(doc.get("arrivals", "bernoulli")), doc.get("fluid", {}) or {}, experiment)


def parse_schedules(spec, queues: list[str]) -> ScheduleSet:
    qidx = {q: i for i, q in enumerate(queues)}
    if isinstance(spec, dict):
        blocks = []
        for b in _require(spec, "blocks", "schedules"):
            names = _require(b, "queues", "block")
            unknown = [q for q in names if isinstance(q, str) and q not in qidx]
            if unknown:
                raise ConfigError(f"block references unknown queue {unknown[0]!r}")
            js = [qidx[q] if isinstance(q, str) else int(q) for q in names]
            blocks.append((js, _require(b, "schedules", "block")))
        try:
            return ScheduleSet.from_blocks(len(queues), blocks)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    try:
        return monotone_closure(spec, len(queues))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path) -> NetworkConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(doc)
