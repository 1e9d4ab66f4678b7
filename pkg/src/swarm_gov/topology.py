"""Service dependency graphs: generation, topology events, neighbourhood queries.

Graphs are immutable. ``apply_topology_event`` returns a new graph whose
``version`` is one larger, which plays the role of the time index of the
dynamic graph. Edges are directed caller -> callee; the neighbourhood used for
embedding is undirected.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

import numpy as np


class TopologyError(ValueError):
    """Raised for inconsistent graphs or events."""


@dataclass(frozen=True)
class ServiceSpec:
    base_latency: float
    base_capacity: float
    cpu_cost_per_capacity_unit: float = 0.1
    max_replicas: int = 8
    layer: int = 0

    def __post_init__(self):
        for name in ("base_latency", "base_capacity", "cpu_cost_per_capacity_unit"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise TopologyError(f"{name} must be finite, got {value}")
        if self.base_latency <= 0:
            raise TopologyError(f"base_latency must be > 0, got {self.base_latency}")
        if self.base_capacity <= 0:
            raise TopologyError(f"base_capacity must be > 0, got {self.base_capacity}")
        if self.cpu_cost_per_capacity_unit < 0:
            raise TopologyError("cpu_cost_per_capacity_unit must be >= 0")
        if int(self.max_replicas) != self.max_replicas or self.max_replicas < 1:
            raise TopologyError(f"max_replicas must be an integer >= 1, got {self.max_replicas}")
        if self.layer < 0:
            raise TopologyError("layer must be >= 0")

    def to_json(self) -> dict:
        return {
            "base_latency": self.base_latency,
            "base_capacity": self.base_capacity,
            "cpu_cost_per_capacity_unit": self.cpu_cost_per_capacity_unit,
            "max_replicas": self.max_replicas,
            "layer": self.layer,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "ServiceSpec":
        return cls(
            base_latency=float(d["base_latency"]),
            base_capacity=float(d["base_capacity"]),
            cpu_cost_per_capacity_unit=float(d.get("cpu_cost_per_capacity_unit", 0.1)),
            max_replicas=int(d.get("max_replicas", 8)),
            layer=int(d.get("layer", 0)),
        )


@dataclass(frozen=True, eq=False)
class DependencyGraph:
    nodes: frozenset
    edges: frozenset
    node_attrs: Mapping[int, ServiceSpec]
    version: int = 0
    # memo for derived structures (adjacency matrices, orderings); never compared
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for caller, callee in self.edges:
            if caller == callee:
                raise TopologyError(f"self-edge ({caller}, {callee}) is not allowed")
            if caller not in self.nodes or callee not in self.nodes:
                raise TopologyError(f"edge ({caller}, {callee}) references a missing service")
        if set(self.node_attrs) != set(self.nodes):
            raise TopologyError("node_attrs must cover exactly the node set")

    def __eq__(self, other):
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and dict(self.node_attrs) == dict(other.node_attrs)
            and self.version == other.version
        )

    def structurally_equal(self, other: "DependencyGraph") -> bool:
        """Equality ignoring ``version``."""
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and dict(self.node_attrs) == dict(other.node_attrs)
        )

    def sorted_nodes(self) -> list[int]:
        key = "sorted_nodes"
        if key not in self.cache:
            self.cache[key] = sorted(self.nodes)
        return self.cache[key]

    def successors(self, v: int) -> list[int]:
        return self._adjacency()[0].get(v, [])

    def predecessors(self, v: int) -> list[int]:
        return self._adjacency()[1].get(v, [])

    def _adjacency(self):
        if "adj" not in self.cache:
            succ: dict[int, list[int]] = {}
            pred: dict[int, list[int]] = {}
            for caller, callee in sorted(self.edges):
                succ.setdefault(caller, []).append(callee)
                pred.setdefault(callee, []).append(caller)
            self.cache["adj"] = (succ, pred)
        return self.cache["adj"]

    def topological_order(self) -> list[int]:
        """Kahn's algorithm with smallest-id tie breaking; raises on a cycle."""
        if "topo" not in self.cache:
            indeg = {v: 0 for v in self.nodes}
            for _, callee in self.edges:
                indeg[callee] += 1
            ready = sorted(v for v, d in indeg.items() if d == 0)
            order = []
            heapq.heapify(ready)
            while ready:
                v = heapq.heappop(ready)
                order.append(v)
                for w in self.successors(v):
                    indeg[w] -= 1
                    if indeg[w] == 0:
                        heapq.heappush(ready, w)
            if len(order) != len(self.nodes):
                raise TopologyError("dependency graph contains a cycle")
            self.cache["topo"] = order
        return self.cache["topo"]

    def layer_of(self, v: int) -> int:
        return self.node_attrs[v].layer

    def entry_services(self) -> list[int]:
        """Services that receive external traffic: the first layer."""
        return [v for v in self.sorted_nodes() if self.node_attrs[v].layer == 0]

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": v, **self.node_attrs[v].to_json()} for v in self.sorted_nodes()],
            "edges": [[c, e] for c, e in sorted(self.edges)],
            "version": self.version,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "DependencyGraph":
        attrs = {int(n["id"]): ServiceSpec.from_json(n) for n in d["nodes"]}
        edges = frozenset((int(c), int(e)) for c, e in d["edges"])
        return cls(frozenset(attrs), edges, attrs, int(d.get("version", 0)))


@dataclass(frozen=True)
class TopologyConfig:
    num_services: int = 100
    layers: int = 4
    edge_prob: float = 0.08
    base_latency: tuple[float, float] = (0.02, 0.05)
    base_capacity: tuple[float, float] = (20.0, 60.0)
    cpu_cost: tuple[float, float] = (0.05, 0.15)
    max_replicas: int = 8
    # padding width for global state vectors; leaves room for AddService events
    max_services: int = 128


def layer_assignment(num_services: int, layers: int) -> list[int]:
    """Contiguous, near-equal layer blocks: service ``i`` sits in layer ``i*layers//n``."""
    return [(i * layers) // num_services for i in range(num_services)]


def generate_topology(cfg: TopologyConfig, seed: int) -> DependencyGraph:
    """Layered random DAG; edges only go from layer k to layer k+1.

    Every service outside the first layer gets at least one caller: its
    incoming edge set is redrawn until non-empty (after 100 tries a single
    uniformly chosen caller is used, which only matters for tiny edge_prob).
    """
    if cfg.num_services < 1 or cfg.layers < 1:
        raise TopologyError("num_services and layers must be >= 1")
    if not 0.0 <= cfg.edge_prob <= 1.0:
        raise TopologyError(f"edge_prob must lie in [0, 1], got {cfg.edge_prob}")
    if cfg.num_services < cfg.layers:
        raise TopologyError(
            f"num_services ({cfg.num_services}) < layers ({cfg.layers}): cannot populate every layer"
        )
    rng = np.random.default_rng(seed)
    layer = layer_assignment(cfg.num_services, cfg.layers)
    members = [[i for i in range(cfg.num_services) if layer[i] == k] for k in range(cfg.layers)]

    attrs = {}
    for i in range(cfg.num_services):
        attrs[i] = ServiceSpec(
            base_latency=float(rng.uniform(*cfg.base_latency)),
            base_capacity=float(rng.uniform(*cfg.base_capacity)),
            cpu_cost_per_capacity_unit=float(rng.uniform(*cfg.cpu_cost)),
            max_replicas=cfg.max_replicas,
            layer=layer[i],
        )

    edges = set()
    for k in range(1, cfg.layers):
        callers = members[k - 1]
        for v in members[k]:
            chosen: list[int] = []
            for _ in range(100):
                mask = rng.random(len(callers)) < cfg.edge_prob
                chosen = [u for u, m in zip(callers, mask) if m]
                if chosen:
                    break
            if not chosen:
                chosen = [callers[int(rng.integers(len(callers)))]]
            edges.update((u, v) for u in chosen)

    return DependencyGraph(frozenset(attrs), frozenset(edges), attrs, 0)


class EventKind(str, Enum):
    ADD_SERVICE = "AddService"
    REMOVE_SERVICE = "RemoveService"
    ADD_EDGE = "AddEdge"
    REMOVE_EDGE = "RemoveEdge"


@dataclass(frozen=True)
class TopologyEvent:
    kind: EventKind
    at_time: float = 0.0
    service: int | None = None
    edge: tuple[int, int] | None = None
    spec: ServiceSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.at_time < 0:
            raise TopologyError("at_time must be >= 0")
        if self.kind in (EventKind.ADD_EDGE, EventKind.REMOVE_EDGE):
            if self.edge is None or len(self.edge) != 2:
                raise TopologyError(f"{self.kind.value} needs an edge payload")
            object.__setattr__(self, "edge", (int(self.edge[0]), int(self.edge[1])))
            if self.edge[0] == self.edge[1]:
                raise TopologyError(f"{self.kind.value}({self.edge[0]}, {self.edge[1]}): self-edge")
        else:
            if self.service is None:
                raise TopologyError(f"{self.kind.value} needs a service payload")
            if self.kind is EventKind.ADD_SERVICE and self.spec is None:
                raise TopologyError("AddService needs a ServiceSpec")

    def to_json(self) -> dict:
        d: dict = {"kind": self.kind.value, "at_time": self.at_time}
        if self.service is not None:
            d["service"] = self.service
        if self.edge is not None:
            d["edge"] = list(self.edge)
        if self.spec is not None:
            d["spec"] = self.spec.to_json()
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "TopologyEvent":
        spec = ServiceSpec.from_json(d["spec"]) if d.get("spec") is not None else None
        edge = tuple(d["edge"]) if d.get("edge") is not None else None
        service = int(d["service"]) if d.get("service") is not None else None
        return cls(EventKind(d["kind"]), float(d.get("at_time", 0.0)), service, edge, spec)


def apply_topology_event(g: DependencyGraph, ev: TopologyEvent) -> DependencyGraph:
    nodes, edges, attrs = set(g.nodes), set(g.edges), dict(g.node_attrs)
    kind = ev.kind
    if kind is EventKind.ADD_SERVICE:
        if ev.service in nodes:
            raise TopologyError(f"AddService({ev.service}): service already exists")
        nodes.add(ev.service)
        attrs[ev.service] = ev.spec
    elif kind is EventKind.REMOVE_SERVICE:
        if ev.service not in nodes:
            raise TopologyError(f"RemoveService({ev.service}): no such service")
        nodes.discard(ev.service)
        del attrs[ev.service]
        edges = {e for e in edges if ev.service not in e}
    elif kind is EventKind.ADD_EDGE:
        caller, callee = ev.edge
        if caller not in nodes or callee not in nodes:
            raise TopologyError(f"AddEdge{ev.edge}: endpoint is not a service")
        if ev.edge in edges:
            raise TopologyError(f"AddEdge{ev.edge}: edge already exists")
        edges.add(ev.edge)
    elif kind is EventKind.REMOVE_EDGE:
        if ev.edge not in edges:
            raise TopologyError(f"RemoveEdge{ev.edge}: no such edge")
        edges.discard(ev.edge)
    new = DependencyGraph(frozenset(nodes), frozenset(edges), attrs, g.version + 1)
    if kind is EventKind.ADD_EDGE:
        try:
            new.topological_order()
        except TopologyError:
            raise TopologyError(f"AddEdge{ev.edge}: would create a cycle") from None
    return new


def apply_events(g: DependencyGraph, events: Iterable[TopologyEvent]) -> DependencyGraph:
    for ev in events:
        g = apply_topology_event(g, ev)
    return g


def neighbors(g: DependencyGraph, v: int) -> set[int]:
    """Undirected neighbourhood of ``v`` (callers and callees), excluding ``v``."""
    if v not in g.nodes:
        raise TopologyError(f"unknown service {v}")
    return set(g.successors(v)) | set(g.predecessors(v))


def degree(g: DependencyGraph, v: int) -> int:
    """Undirected degree plus one for the virtual self-loop."""
    return len(neighbors(g, v)) + 1


def normalization_coefficient(g: DependencyGraph, v: int, u: int) -> float:
    if u != v and u not in neighbors(g, v):
        raise TopologyError(f"{u} is not adjacent to {v}")
    if u not in g.nodes:
        raise TopologyError(f"unknown service {u}")
    return math.sqrt(degree(g, v) * degree(g, u))


def with_specs(g: DependencyGraph, specs: Mapping[int, ServiceSpec]) -> DependencyGraph:
    """Same structure and version, replaced node attributes (used by capacity calibration)."""
    attrs = dict(g.node_attrs)
    attrs.update(specs)
    return replace(g, node_attrs=attrs, cache={})
