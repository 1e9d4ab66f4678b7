"""Discrete-time request-flow simulation over the dependency graph.

One ``step`` covers one workload window. Per window:

1. every agent's action is applied (replicas, admission fraction);
2. each entry service receives Poisson arrivals;
3. calls fan out along every outgoing edge; a service admits the fraction
   ``admission`` of the calls it is offered, and only admitted calls are
   forwarded (fluid flow, exact on a DAG after ``depth`` sweeps);
4. each service's latency follows a capped M/M/1-style curve in its admitted
   demand; a request's end-to-end latency is its critical path (callees run in
   parallel);
5. a request fails if any call in its call tree is rejected or hits a removed
   service; failed requests are charged a timeout of ``LATENCY_CAP_FACTOR``
   times the SLO target, the largest latency the reward can see.

Requests from the same entry service in the same window are identical in this
model, so they are emitted as one ``RequestRecord`` carrying a ``count``
(separately for completed and failed requests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .agents import Action
from .rng import generator_from_state
from .topology import DependencyGraph, ServiceSpec, TopologyEvent, apply_topology_event, EventKind

UTILIZATION_CAP = 0.95
LATENCY_CAP_FACTOR = 1.0 / (1.0 - UTILIZATION_CAP)  # 20x base latency
FEATURE_RHO_CLIP = 5.0
MIN_ADMISSION = 0.01


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    beta: float = 0.1
    kappa: float = 1.0
    slo_target: float = 0.5


@dataclass(frozen=True)
class BurstSpec:
    start: float  # seconds, inclusive
    end: float  # seconds, exclusive
    multiplier: float = 5.0

    @classmethod
    def from_windows(cls, first: int, last: int, multiplier: float, window_length: float) -> "BurstSpec":
        """Burst over 1-indexed windows ``first..last`` inclusive."""
        return cls((first - 1) * window_length, last * window_length, multiplier)


@dataclass(frozen=True)
class WorkloadSchedule:
    windows: tuple  # ((window_start_s, arrival_rate_per_entry), ...)
    window_length: float = 60.0

    def __post_init__(self):
        if self.window_length <= 0:
            raise SimulationError("window_length must be > 0")
        object.__setattr__(self, "windows", tuple((float(a), float(b)) for a, b in self.windows))
        for k, (start, rate) in enumerate(self.windows):
            if not math.isclose(start, k * self.window_length, rel_tol=0, abs_tol=1e-9):
                raise SimulationError("windows must be contiguous and start at 0")
            if rate < 0:
                raise SimulationError(f"arrival rate must be >= 0 (window {k})")

    @classmethod
    def constant(cls, rate: float, num_windows: int, window_length: float = 60.0) -> "WorkloadSchedule":
        return cls.from_rates([rate] * num_windows, window_length)

    @classmethod
    def from_rates(cls, rates: Sequence[float], window_length: float = 60.0) -> "WorkloadSchedule":
        return cls(tuple((k * window_length, r) for k, r in enumerate(rates)), window_length)

    @property
    def num_windows(self) -> int:
        return len(self.windows)

    @property
    def horizon(self) -> float:
        return self.num_windows * self.window_length

    @property
    def rates(self) -> list[float]:
        return [r for _, r in self.windows]

    def window_index(self, clock: float) -> int:
        k = int(math.floor(clock / self.window_length + 1e-9))
        if clock < 0 or k >= self.num_windows:
            raise SimulationError(f"clock {clock} s lies outside the schedule horizon {self.horizon} s")
        return k

    def rate_at(self, k: int) -> float:
        return self.windows[k][1]


def inject_burst(w: WorkloadSchedule, burst: BurstSpec) -> WorkloadSchedule:
    if burst.multiplier < 1:
        raise SimulationError("burst multiplier must be >= 1")
    if not (0 <= burst.start < burst.end <= w.horizon + 1e-9):
        raise SimulationError(
            f"burst [{burst.start}, {burst.end}) lies outside the horizon [0, {w.horizon})"
        )
    windows = tuple(
        (start, rate * burst.multiplier if burst.start <= start < burst.end else rate)
        for start, rate in w.windows
    )
    return WorkloadSchedule(windows, w.window_length)


@dataclass(frozen=True)
class RequestRecord:
    window: int
    entry: int
    count: int
    latency: float
    met_slo: bool
    failed: bool
    path: tuple  # services in the request's call tree, topological order
    ideal_latency: float = 0.0  # critical path at base latency
    worst_latency: float = 0.0  # critical path at capped latency

    def to_json(self) -> dict:
        return {
            "window": self.window,
            "entry": self.entry,
            "count": self.count,
            "path": list(self.path),
            "latency_s": self.latency,
            "met_slo": self.met_slo,
            "failed": self.failed,
        }


@dataclass(frozen=True, eq=False)
class SystemState:
    graph: DependencyGraph
    routing_graph: DependencyGraph  # graph the current window's calls follow
    replicas: np.ndarray  # int, slot-indexed; 0 for absent services
    admission: np.ndarray  # admitted fraction of offered calls, in (0, 1]
    offered_rate: np.ndarray  # calls/s offered last window
    utilization: np.ndarray
    latency: np.ndarray  # own service latency last window, seconds
    clock: float
    rng_state: dict = field(repr=False)

    @property
    def num_slots(self) -> int:
        return self.replicas.shape[0]

    @property
    def admitted_rate(self) -> np.ndarray:
        return self.offered_rate * self.admission

    def local_features(self, slo_target: float) -> np.ndarray:
        """(slots, 4): utilization, replicas/max, admission fraction, latency/SLO."""
        key = ("features", slo_target)
        cached = self.__dict__.get("_feat")
        if cached is not None and cached[0] == key:
            return cached[1]
        idx = _index(self.graph, self.num_slots)
        x = np.zeros((self.num_slots, 4))
        live = idx.live
        x[live, 0] = np.minimum(self.utilization[live], FEATURE_RHO_CLIP)
        x[live, 1] = self.replicas[live] / idx.max_replicas[live]
        x[live, 2] = self.admission[live]
        x[live, 3] = np.minimum(self.latency[live] / slo_target, LATENCY_CAP_FACTOR)
        object.__setattr__(self, "_feat", (key, x))
        return x


@dataclass
class StepOutcome:
    next_state: SystemState
    rewards: dict
    trace_records: list
    reward_array: np.ndarray = field(repr=False, default=None)  # slot-indexed, NaN for non-agents
    window: int = 0
    demand: np.ndarray = field(repr=False, default=None)
    completed: int = 0
    failed: int = 0


class _GraphIndex:
    """Slot-indexed arrays derived from a graph."""

    def __init__(self, g: DependencyGraph, slots: int):
        if g.nodes and max(g.nodes) >= slots:
            raise SimulationError(f"service id {max(g.nodes)} does not fit in {slots} slots")
        self.slots = slots
        self.live = np.array(g.sorted_nodes(), dtype=int)
        self.live_mask = np.zeros(slots, dtype=bool)
        self.live_mask[self.live] = True
        self.adj = np.zeros((slots, slots))
        for c, e in g.edges:
            self.adj[c, e] = 1.0
        succ = [[] for _ in range(slots)]
        for c, e in sorted(g.edges):
            succ[c].append(e)
        width = max((len(x) for x in succ), default=0) or 1
        self.succ = np.full((slots, width), slots, dtype=int)
        for v, xs in enumerate(succ):
            self.succ[v, :len(xs)] = xs
        order = g.topological_order()
        depth = {v: 0 for v in order}
        for v in order:
            for w in g.successors(v):
                depth[w] = max(depth[w], depth[v] + 1)
        self.depth = max(depth.values(), default=0)
        self.base_latency = np.zeros(slots)
        self.base_capacity = np.ones(slots)
        self.cpu_unit = np.zeros(slots)
        self.max_replicas = np.ones(slots)
        for v, spec in g.node_attrs.items():
            self.base_latency[v] = spec.base_latency
            self.base_capacity[v] = spec.base_capacity
            self.cpu_unit[v] = spec.cpu_cost_per_capacity_unit
            self.max_replicas[v] = spec.max_replicas
        self.entries = np.array(g.entry_services(), dtype=int)
        # path counts entry -> service; reach is its support
        paths = np.zeros((len(self.entries), slots))
        frontier = np.zeros_like(paths)
        frontier[np.arange(len(self.entries)), self.entries] = 1.0
        for _ in range(self.depth + 1):
            paths += frontier
            frontier = frontier @ self.adj
        self.paths = paths
        self.reach = paths > 0
        pos = {v: i for i, v in enumerate(order)}
        self.trees = [
            tuple(sorted(np.flatnonzero(self.reach[k]).tolist(), key=pos.__getitem__))
            for k in range(len(self.entries))
        ]
        self.cp_base = self.critical_path(self.base_latency)

    def critical_path(self, lat: np.ndarray) -> np.ndarray:
        """Critical-path latency of a request entering at each entry service."""
        cp = lat.copy()
        ext = np.zeros(self.slots + 1)  # slot ``slots`` pads missing successors with 0
        for _ in range(self.depth):
            ext[:-1] = cp
            cp = lat + ext[self.succ].max(axis=1)
        return cp[self.entries]

    def flow(self, external: np.ndarray, admit: np.ndarray) -> np.ndarray:
        """Offered calls per service given external arrivals and admission fractions."""
        offered = external.copy()
        for _ in range(self.depth):
            offered = external + (admit * offered) @ self.adj
        return offered


def _index(g: DependencyGraph, slots: int) -> _GraphIndex:
    key = ("sim_index", slots)
    if key not in g.cache:
        g.cache[key] = _GraphIndex(g, slots)
    return g.cache[key]


def graph_index(g: DependencyGraph, slots: int) -> _GraphIndex:
    return _index(g, slots)


def service_latency(spec: ServiceSpec, replicas: int, demand: float) -> float:
    if replicas < 1:
        raise SimulationError("replicas must be >= 1")
    rho = demand / (replicas * spec.base_capacity)
    return spec.base_latency / (1.0 - min(rho, UTILIZATION_CAP))


def _latency_vec(base_latency, base_capacity, replicas, demand):
    rho = demand / (np.maximum(replicas, 1) * base_capacity)
    return base_latency / (1.0 - np.minimum(rho, UTILIZATION_CAP)), rho


def compute_reward(spec: ServiceSpec, replicas: int, records: Sequence[RequestRecord],
                   weights: RewardWeights = RewardWeights()) -> float:
    """-(mean latency / SLO) - beta * cpu cost - kappa * failure fraction.

    Means are request-weighted (``count``); failed requests enter the latency
    mean at their timeout value.
    """
    total = sum(r.count for r in records)
    cpu_cost = replicas * spec.cpu_cost_per_capacity_unit
    if total == 0:
        return -weights.beta * cpu_cost
    mean_latency = sum(r.count * r.latency for r in records) / total
    failure = sum(r.count for r in records if r.failed) / total
    return -(mean_latency / weights.slo_target) - weights.beta * cpu_cost - weights.kappa * failure


def initial_state(graph: DependencyGraph, schedule: WorkloadSchedule, slots: int,
                  rng: np.random.Generator, replicas: int | Mapping[int, int] = 1) -> SystemState:
    """Start-of-run state; utilization and latency are primed with window 0's expected load."""
    idx = _index(graph, slots)
    reps = np.zeros(slots, dtype=int)
    if isinstance(replicas, Mapping):
        for v in idx.live:
            reps[v] = replicas.get(int(v), 1)
    else:
        reps[idx.live] = replicas
    admission = np.where(idx.live_mask, 1.0, 0.0)
    ext = np.zeros(slots)
    ext[idx.entries] = schedule.rate_at(0)
    offered = idx.flow(ext, admission)
    lat, rho = _latency_vec(idx.base_latency, idx.base_capacity, reps, offered * admission)
    lat = np.where(idx.live_mask, lat, 0.0)
    rho = np.where(idx.live_mask, rho, 0.0)
    return SystemState(graph, graph, reps, admission, offered, rho, lat, 0.0, rng.bit_generator.state)


def apply_event(s: SystemState, ev: TopologyEvent) -> SystemState:
    """Apply a topology event to a running simulation.

    The calls of the next window still follow ``routing_graph``, so requests
    routed through a just-removed service fail for one window.
    """
    g = apply_topology_event(s.graph, ev)
    replicas, admission = s.replicas.copy(), s.admission.copy()
    offered, util, lat = s.offered_rate.copy(), s.utilization.copy(), s.latency.copy()
    if ev.kind is EventKind.ADD_SERVICE:
        if ev.service >= s.num_slots:
            raise SimulationError(f"service id {ev.service} exceeds {s.num_slots} slots")
        replicas[ev.service], admission[ev.service] = 1, 1.0
        offered[ev.service] = util[ev.service] = 0.0
        lat[ev.service] = ev.spec.base_latency
    elif ev.kind is EventKind.REMOVE_SERVICE:
        for arr in (replicas, admission, offered, util, lat):
            arr[ev.service] = 0
    routing = s.routing_graph if ev.kind is EventKind.REMOVE_SERVICE else _merge_routing(s, g)
    return replace(s, graph=g, routing_graph=routing, replicas=replicas, admission=admission,
                   offered_rate=offered, utilization=util, latency=lat)


def _merge_routing(s: SystemState, g: DependencyGraph) -> DependencyGraph:
    # additions take effect immediately; a pending removal keeps the stale graph
    if s.routing_graph is s.graph:
        return g
    stale = s.routing_graph
    if g.nodes <= stale.nodes and g.edges <= stale.edges:
        return stale
    nodes = stale.nodes | g.nodes
    attrs = {**dict(stale.node_attrs), **dict(g.node_attrs)}
    return DependencyGraph(frozenset(nodes), frozenset(stale.edges | g.edges), attrs, stale.version)


def _apply_actions(s: SystemState, idx: _GraphIndex, joint_action: Mapping[int, int]):
    replicas = s.replicas.copy()
    admission = s.admission.copy()
    for agent, a in joint_action.items():
        if agent not in s.graph.nodes:
            raise SimulationError(f"action for service {agent}, which is not live")
        a = Action(a)
        if a is Action.SCALE_UP:
            replicas[agent] = min(replicas[agent] + 1, idx.max_replicas[agent])
        elif a is Action.SCALE_DOWN:
            replicas[agent] = max(replicas[agent] - 1, 1)
        elif a is Action.THROTTLE_ADMISSION:
            admission[agent] = max(admission[agent] * 0.8, MIN_ADMISSION)
        elif a is Action.RELAX_ADMISSION:
            admission[agent] = min(admission[agent] * 1.25, 1.0)
    return replicas, admission


def _apply_action_array(s: SystemState, idx: _GraphIndex, actions: np.ndarray):
    """Array form of ``_apply_actions``: ``actions`` slot-indexed, -1 = no agent."""
    replicas = s.replicas.copy()
    admission = s.admission.copy()
    bad = (actions >= 0) & ~idx.live_mask
    if np.any(bad):
        raise SimulationError(f"action for service {int(np.flatnonzero(bad)[0])}, which is not live")
    up = actions == Action.SCALE_UP
    down = actions == Action.SCALE_DOWN
    replicas[up] = np.minimum(replicas[up] + 1, idx.max_replicas[up]).astype(int)
    replicas[down] = np.maximum(replicas[down] - 1, 1)
    thr = actions == Action.THROTTLE_ADMISSION
    rel = actions == Action.RELAX_ADMISSION
    admission[thr] = np.maximum(admission[thr] * 0.8, MIN_ADMISSION)
    admission[rel] = np.minimum(admission[rel] * 1.25, 1.0)
    return replicas, admission


def step(s: SystemState, joint_action: Mapping[int, int] | np.ndarray, w: WorkloadSchedule,
         weights: RewardWeights = RewardWeights(), *, with_records: bool = True) -> StepOutcome:
    k = w.window_index(s.clock)
    live_idx = _index(s.graph, s.num_slots)
    route = _index(s.routing_graph, s.num_slots)
    if isinstance(joint_action, np.ndarray):
        actions = joint_action
        replicas, admission = _apply_action_array(s, live_idx, actions)
        agents = np.flatnonzero(actions >= 0)
    else:
        replicas, admission = _apply_actions(s, live_idx, joint_action)
        agents = np.array(sorted(joint_action), dtype=int)

    rng = generator_from_state(s.rng_state)
    alive = live_idx.live_mask
    entries = route.entries
    entry_alive = alive[entries]
    arrivals = np.zeros(len(entries), dtype=np.int64)
    lam = w.rate_at(k) * w.window_length
    if lam > 0 and len(entries):
        draws = rng.poisson(lam, size=len(entries))
        arrivals = np.where(entry_alive, draws, 0)

    admit_eff = np.where(alive, admission, 0.0)
    external = np.zeros(s.num_slots)
    external[entries] = arrivals
    offered = route.flow(external, admit_eff)
    demand = offered * admit_eff / w.window_length
    base_lat = np.where(alive, live_idx.base_latency, route.base_latency)
    lat, rho = _latency_vec(base_lat, np.where(alive, live_idx.base_capacity, route.base_capacity),
                            replicas, demand)
    lat = np.where(alive, lat, 0.0)
    rho = np.where(alive, rho, 0.0)

    cp = route.critical_path(np.where(alive, lat, base_lat * LATENCY_CAP_FACTOR))
    timeout = np.full(len(entries), LATENCY_CAP_FACTOR * weights.slo_target)
    with np.errstate(divide="ignore"):
        log_admit = np.log(np.where(admit_eff > 0, admit_eff, 1.0))
    blocked = (route.reach & ~alive[None, :]).any(axis=1)
    success = np.where(blocked, 0.0, np.exp(route.paths @ log_admit))
    success = np.clip(success, 0.0, 1.0)
    completed = np.where(arrivals > 0, rng.binomial(arrivals, success), 0)
    failed = arrivals - completed

    # request-weighted latency and failure totals per service
    lat_mass = completed * cp + failed * timeout
    reach = route.reach.astype(float)
    n_through = arrivals @ reach
    lat_through = lat_mass @ reach
    fail_through = failed @ reach
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_lat = np.where(n_through > 0, lat_through / np.maximum(n_through, 1), 0.0)
        fail_frac = np.where(n_through > 0, fail_through / np.maximum(n_through, 1), 0.0)
    cpu = replicas * live_idx.cpu_unit
    reward_vec = -(mean_lat / weights.slo_target) - weights.beta * cpu - weights.kappa * fail_frac
    reward_array = np.full(s.num_slots, np.nan)
    reward_array[agents] = reward_vec[agents]

    records = []
    if with_records:
        for j, e in enumerate(entries):
            tree = route.trees[j]
            if completed[j] > 0:
                records.append(RequestRecord(k, int(e), int(completed[j]), float(cp[j]),
                                             bool(cp[j] <= weights.slo_target), False, tree,
                                             float(route.cp_base[j]), float(timeout[j])))
            if failed[j] > 0:
                records.append(RequestRecord(k, int(e), int(failed[j]), float(timeout[j]), False,
                                             True, tree, float(route.cp_base[j]), float(timeout[j])))

    nxt = SystemState(
        graph=s.graph,
        routing_graph=s.graph,
        replicas=replicas,
        admission=admission,
        offered_rate=np.where(alive, offered / w.window_length, 0.0),
        utilization=rho,
        latency=lat,
        clock=s.clock + w.window_length,
        rng_state=rng.bit_generator.state,
    )
    rewards = dict(zip(agents.tolist(), reward_array[agents].tolist()))
    return StepOutcome(nxt, rewards, records, reward_array, k, demand,
                       int(completed.sum()), int(failed.sum()))
