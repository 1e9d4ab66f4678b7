"""Scenario configuration: one JSON document, fixed schema, shared validator.

Sections: topology, workload, agents, training, evolution, metrics, scenario.
``validate`` never raises on bad input; it returns every problem it finds,
each tagged with its config path (``topology.edge_prob``). ``load`` and
``parse`` raise ``ConfigError`` carrying the same diagnostics.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .evolution import EvolutionConfig
from .topology import TopologyConfig
from .training import TrainingConfig

MODES = ("full", "no_evolution", "no_embedding", "random_policy", "static_policy")
KINDS = ("single", "comparative", "sweep", "burst")
EVENT_KINDS = ("AddService", "RemoveService", "AddEdge", "RemoveEdge")


@dataclass(frozen=True)
class Diagnostic:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"

    def to_json(self) -> dict:
        return {"path": self.path, "message": self.message}


class ConfigError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class BurstConfig:
    first_window: int  # 1-indexed, inclusive
    last_window: int
    multiplier: float = 5.0


@dataclass(frozen=True)
class WorkloadConfig:
    arrival_rate: float = 2.0  # req/s per entry service
    window_length_s: float = 60.0
    num_windows: int = 40
    burst: BurstConfig | None = None
    events: tuple = ()  # event dicts, each with at_window or at_time
    target_replicas: tuple = (2, 4)
    target_utilization: float = 0.6


@dataclass(frozen=True)
class AgentsConfig:
    count: int | None = None  # None: every service is governed
    embedding_dims: tuple = (4, 16, 8)
    init_scale: float = 0.1
    init_bias_scale: float = 1.0
    init_noop_bias: float = 0.0  # added to the NoOp logit of every initial strategy
    initial_replicas: int = 1
    beta: float = 0.1
    kappa: float = 1.0


@dataclass(frozen=True)
class MetricsConfig:
    slo_target_s: float = 0.5
    convergence_eps: float = 0.02
    convergence_window: int = 5
    adaptation_span: int = 3


@dataclass(frozen=True)
class ScenarioSection:
    name: str = "default"
    kind: str = "single"
    mode: str = "full"
    modes: tuple = ("full", "no_evolution", "random_policy", "static_policy")
    seeds: tuple = (0,)
    sweep_counts: tuple = ()
    eval_episodes: int = 2
    warmup_windows: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)

    def to_json(self) -> dict:
        return _jsonable(asdict(self))

    def config_hash(self) -> str:
        return config_hash(self.to_json())

    def with_scenario(self, **kw) -> "ScenarioConfig":
        return replace(self, scenario=replace(self.scenario, **kw))


SECTIONS = {
    "topology": TopologyConfig,
    "workload": WorkloadConfig,
    "agents": AgentsConfig,
    "training": TrainingConfig,
    "evolution": EvolutionConfig,
    "metrics": MetricsConfig,
    "scenario": ScenarioSection,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(doc: dict) -> str:
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


# ---------------------------------------------------------------- validation


def _num(d, key, path, diags, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False, rule=None):
    if key not in d:
        return
    v = d[key]
    where = f"{path}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and int(v) != v):
        diags.append(Diagnostic(where, f"expected {'an integer' if integer else 'a number'}, got {v!r}"))
        return
    if not math.isfinite(v):
        diags.append(Diagnostic(where, "must be finite"))
        return
    bad = (lo is not None and (v <= lo if lo_open else v < lo)) or (
        hi is not None and (v >= hi if hi_open else v > hi))
    if bad:
        if rule is None:
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            rule = f"must lie in {left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
        diags.append(Diagnostic(where, f"{rule}, got {v}"))


def _pair(d, key, path, diags, positive=True):
    if key not in d:
        return
    v = d[key]
    where = f"{path}.{key}"
    if not isinstance(v, (list, tuple)) or len(v) != 2 or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        diags.append(Diagnostic(where, f"expected [low, high], got {v!r}"))
        return
    if v[0] > v[1]:
        diags.append(Diagnostic(where, "low must not exceed high"))
    if positive and v[0] <= 0:
        diags.append(Diagnostic(where, "values must be > 0"))


def validate(doc: Any) -> list[Diagnostic]:
    """Every violation in a raw config document."""
    diags: list[Diagnostic] = []
    if not isinstance(doc, dict):
        return [Diagnostic("$", "config must be a JSON object")]
    for key in doc:
        if key not in SECTIONS:
            diags.append(Diagnostic(key, f"unknown section (expected one of {', '.join(SECTIONS)})"))
    sec = {}
    for name, cls in SECTIONS.items():
        s = doc.get(name, {})
        if not isinstance(s, dict):
            diags.append(Diagnostic(name, "section must be an object"))
            s = {}
        known = {f.name for f in fields(cls)}
        for key in s:
            if key not in known:
                diags.append(Diagnostic(f"{name}.{key}", "unknown field"))
        sec[name] = s

    t = sec["topology"]
    _num(t, "num_services", "topology", diags, lo=1, integer=True)
    _num(t, "layers", "topology", diags, lo=1, integer=True)
    _num(t, "edge_prob", "topology", diags, lo=0, hi=1)
    _num(t, "max_replicas", "topology", diags, lo=1, integer=True)
    _num(t, "max_services", "topology", diags, lo=1, integer=True)
    for k in ("base_latency", "base_capacity"):
        _pair(t, k, "topology", diags)
    _pair(t, "cpu_cost", "topology", diags, positive=False)
    n = t.get("num_services", TopologyConfig.num_services)
    layers = t.get("layers", TopologyConfig.layers)
    max_services = t.get("max_services", TopologyConfig.max_services)
    if isinstance(n, int) and isinstance(layers, int) and n < layers:
        diags.append(Diagnostic("topology.num_services", f"must be >= layers ({layers}) so every layer is populated"))
    if isinstance(n, int) and isinstance(max_services, int) and max_services < n:
        diags.append(Diagnostic("topology.max_services", f"must be >= num_services ({n})"))

    w = sec["workload"]
    _num(w, "arrival_rate", "workload", diags, lo=0)
    _num(w, "window_length_s", "workload", diags, lo=0, lo_open=True)
    _num(w, "num_windows", "workload", diags, lo=1, integer=True)
    _num(w, "target_utilization", "workload", diags, lo=0, hi=1, lo_open=True, hi_open=True)
    _pair(w, "target_replicas", "workload", diags)
    horizon = w.get("num_windows", WorkloadConfig.num_windows)
    wl = w.get("window_length_s", WorkloadConfig.window_length_s)
    burst = w.get("burst")
    if burst is not None:
        if not isinstance(burst, dict):
            diags.append(Diagnostic("workload.burst", "must be an object or null"))
        else:
            for key in burst:
                if key not in ("first_window", "last_window", "multiplier"):
                    diags.append(Diagnostic(f"workload.burst.{key}", "unknown field"))
            for key in ("first_window", "last_window"):
                if key not in burst:
                    diags.append(Diagnostic(f"workload.burst.{key}", "required"))
            _num(burst, "multiplier", "workload.burst", diags, lo=1, rule="multiplier must be >= 1")
            _num(burst, "first_window", "workload.burst", diags, lo=1, integer=True)
            _num(burst, "last_window", "workload.burst", diags, lo=1, integer=True)
            fw, lw = burst.get("first_window"), burst.get("last_window")
            if isinstance(fw, int) and isinstance(lw, int) and isinstance(horizon, int):
                if fw > lw:
                    diags.append(Diagnostic("workload.burst", "first_window must not exceed last_window"))
                if lw > horizon:
                    diags.append(Diagnostic("workload.burst.last_window", f"outside the horizon of {horizon} windows"))
    events = w.get("events", [])
    if not isinstance(events, list):
        diags.append(Diagnostic("workload.events", "must be a list"))
        events = []
    for i, ev in enumerate(events):
        p = f"workload.events[{i}]"
        if not isinstance(ev, dict):
            diags.append(Diagnostic(p, "must be an object"))
            continue
        if ev.get("kind") not in EVENT_KINDS:
            diags.append(Diagnostic(f"{p}.kind", f"must be one of {', '.join(EVENT_KINDS)}"))
        if "at_window" not in ev and "at_time" not in ev:
            diags.append(Diagnostic(p, "needs at_window or at_time"))
        _num(ev, "at_window", p, diags, lo=0, integer=True)
        _num(ev, "at_time", p, diags, lo=0)
        at = ev.get("at_window")
        if isinstance(at, int) and isinstance(horizon, int) and at >= horizon:
            diags.append(Diagnostic(f"{p}.at_window", f"outside the horizon of {horizon} windows"))
        at_t = ev.get("at_time")
        if isinstance(at_t, (int, float)) and isinstance(horizon, int) and isinstance(wl, (int, float)) and at_t >= horizon * wl:
            diags.append(Diagnostic(f"{p}.at_time", "outside the horizon"))
        kind = ev.get("kind")
        if kind in ("AddEdge", "RemoveEdge"):
            e = ev.get("edge")
            if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e)):
                diags.append(Diagnostic(f"{p}.edge", "expected [caller, callee]"))
            elif e[0] == e[1]:
                diags.append(Diagnostic(f"{p}.edge", "self-edges are not allowed"))
        elif kind in ("AddService", "RemoveService"):
            if not isinstance(ev.get("service"), int):
                diags.append(Diagnostic(f"{p}.service", "expected a service id"))
            elif isinstance(max_services, int) and not 0 <= ev["service"] < max_services:
                diags.append(Diagnostic(f"{p}.service", f"must lie in [0, {max_services})"))
            if kind == "AddService" and not isinstance(ev.get("spec"), dict):
                diags.append(Diagnostic(f"{p}.spec", "AddService needs a spec object"))

    a = sec["agents"]
    if a.get("count") is not None:
        _num(a, "count", "agents", diags, lo=1, integer=True)
        if isinstance(a["count"], int) and isinstance(n, int) and a["count"] > n:
            diags.append(Diagnostic("agents.count", f"exceeds num_services ({n})"))
    dims = a.get("embedding_dims")
    if dims is not None:
        if not isinstance(dims, list) or not dims or not all(isinstance(x, int) and x > 0 for x in dims):
            diags.append(Diagnostic("agents.embedding_dims", "expected a non-empty list of positive integers"))
        elif dims[0] != 4:
            diags.append(Diagnostic("agents.embedding_dims", "first dimension must equal the 4 local features"))
    _num(a, "init_scale", "agents", diags, lo=0)
    _num(a, "init_bias_scale", "agents", diags, lo=0)
    _num(a, "init_noop_bias", "agents", diags)
    _num(a, "initial_replicas", "agents", diags, lo=1, integer=True)
    _num(a, "beta", "agents", diags, lo=0)
    _num(a, "kappa", "agents", diags, lo=0)

    tr = sec["training"]
    _num(tr, "gamma", "training", diags, lo=0, hi=1, lo_open=True, hi_open=True,
         rule="gamma must lie in the open interval (0, 1)")
    for key in ("critic_lr", "actor_lr", "embedding_lr"):
        _num(tr, key, "training", diags, lo=0)
    _num(tr, "batch_size", "training", diags, lo=1, integer=True)
    _num(tr, "buffer_capacity", "training", diags, lo=1, integer=True)
    _num(tr, "epochs_per_generation", "training", diags, lo=0, integer=True)
    if "baseline" in tr and tr["baseline"] not in ("batch_mean", "counterfactual", "none"):
        diags.append(Diagnostic("training.baseline", "must be one of batch_mean, counterfactual, none"))

    ev_ = sec["evolution"]
    _num(ev_, "step_size", "evolution", diags, lo=0)
    _num(ev_, "step_decay", "evolution", diags, lo=0)
    _num(ev_, "mutation_rate", "evolution", diags, lo=0, hi=1)
    _num(ev_, "eval_episodes_per_strategy", "evolution", diags, lo=1, integer=True)
    _num(ev_, "extinction_floor", "evolution", diags, lo=0)
    _num(ev_, "portfolio_size", "evolution", diags, lo=1, integer=True)
    _num(ev_, "refresh_patience", "evolution", diags, lo=1, integer=True)
    _num(ev_, "refresh_noise", "evolution", diags, lo=0)
    _num(ev_, "focal_fraction", "evolution", diags, lo=0, hi=1, lo_open=True)
    _num(ev_, "generations", "evolution", diags, lo=0, integer=True)
    floor = ev_.get("extinction_floor", EvolutionConfig.extinction_floor)
    size = ev_.get("portfolio_size", EvolutionConfig.portfolio_size)
    if isinstance(floor, (int, float)) and isinstance(size, int) and size > 0 and floor * size >= 1:
        diags.append(Diagnostic("evolution.extinction_floor", "floor times portfolio_size must be < 1"))
    if "fitness_target" in ev_ and ev_["fitness_target"] not in ("individual", "welfare"):
        diags.append(Diagnostic("evolution.fitness_target", "must be one of individual, welfare"))
    for key in ("frozen", "fitness_control"):
        if key in ev_ and not isinstance(ev_[key], bool):
            diags.append(Diagnostic(f"evolution.{key}", "expected true or false"))

    m = sec["metrics"]
    _num(m, "slo_target_s", "metrics", diags, lo=0, lo_open=True)
    _num(m, "convergence_eps", "metrics", diags, lo=0, lo_open=True)
    _num(m, "convergence_window", "metrics", diags, lo=1, integer=True)
    _num(m, "adaptation_span", "metrics", diags, lo=1, integer=True)

    s = sec["scenario"]
    if "kind" in s and s["kind"] not in KINDS:
        diags.append(Diagnostic("scenario.kind", f"must be one of {', '.join(KINDS)}"))
    if "mode" in s and s["mode"] not in MODES:
        diags.append(Diagnostic("scenario.mode", f"must be one of {', '.join(MODES)}"))
    if "modes" in s:
        if not isinstance(s["modes"], list) or not s["modes"]:
            diags.append(Diagnostic("scenario.modes", "expected a non-empty list"))
        else:
            for i, md in enumerate(s["modes"]):
                if md not in MODES:
                    diags.append(Diagnostic(f"scenario.modes[{i}]", f"must be one of {', '.join(MODES)}"))
    if "seeds" in s:
        seeds = s["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in seeds):
            diags.append(Diagnostic("scenario.seeds", "expected a non-empty list of non-negative integers"))
    if "sweep_counts" in s:
        counts = s["sweep_counts"]
        if not isinstance(counts, list) or not all(isinstance(x, int) and x >= 1 for x in counts):
            diags.append(Diagnostic("scenario.sweep_counts", "expected a list of positive integers"))
        elif isinstance(n, int):
            for i, c in enumerate(counts):
                if c > n:
                    diags.append(Diagnostic(f"scenario.sweep_counts[{i}]", f"{c} exceeds num_services ({n})"))
    if s.get("kind") == "sweep" and len(s.get("sweep_counts", [])) < 1:
        diags.append(Diagnostic("scenario.sweep_counts", "a sweep needs at least one agent count"))
    if s.get("kind") == "burst" and w.get("burst") is None:
        diags.append(Diagnostic("workload.burst", "a burst scenario needs a burst spec"))
    _num(s, "eval_episodes", "scenario", diags, lo=1, integer=True)
    _num(s, "warmup_windows", "scenario", diags, lo=0, integer=True)
    if "name" in s and not isinstance(s["name"], str):
        diags.append(Diagnostic("scenario.name", "expected a string"))
    return diags


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def parse(doc: dict) -> ScenarioConfig:
    diags = validate(doc)
    if diags:
        raise ConfigError(diags)
    built = {}
    for name, cls in SECTIONS.items():
        raw = dict(doc.get(name, {}))
        if name == "workload":
            if raw.get("burst") is not None:
                raw["burst"] = BurstConfig(**raw["burst"])
            if "events" in raw:
                raw["events"] = tuple(dict(e) for e in raw["events"])
            if "target_replicas" in raw:
                raw["target_replicas"] = tuple(raw["target_replicas"])
        else:
            raw = {k: _tuplify(v) for k, v in raw.items()}
        try:
            built[name] = cls(**raw)
        except (TypeError, ValueError) as exc:  # section-level invariants
            raise ConfigError([Diagnostic(name, str(exc))]) from exc
    return ScenarioConfig(**built)


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([Diagnostic("$", f"no such file: {path}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([Diagnostic("$", f"invalid JSON: {exc}")]) from None
    return parse(doc)


def validate_file(path) -> list[Diagnostic]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        return [Diagnostic("$", f"no such file: {path}")]
    except json.JSONDecodeError as exc:
        return [Diagnostic("$", f"invalid JSON: {exc}")]
    diags = validate(doc)
    if not diags:
        try:
            parse(doc)
        except ConfigError as exc:
            diags = exc.diagnostics
    return diags
