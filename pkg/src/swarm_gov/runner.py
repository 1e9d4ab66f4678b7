"""One governance run: a world (graph, workload, events), learners, and the generation loop.

A generation is Baldwinian: the learners take ``epochs_per_generation``
gradient steps on the replay buffer, then every role's portfolio is scored
by fitness episodes (which also refill the buffer), then shares move by the
replicator. The learned parameters are the ones carried forward.

Fitness is estimated jointly for all roles. A sample draws, per role, a
random permutation of the portfolio and a random ``focal_fraction`` of the
role's agents; in its k-th episode the focal agents of role r play strategy
perm_r[k] and everyone else plays a strategy drawn from the shares. Every
strategy of every role is thus scored once per sample, and independent
permutations keep one role's strategy index from being tied to another's.
All n episodes of one sample replay the same random numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngs
from .agents import LOCAL_FEATURES, NUM_ACTIONS, Action, PolicyParameters, act_batch, discounted_returns
from .embedding import init_weights
from .evolution import EvolutionConfig, StrategyPopulation, advance_shares, sample_strategies
from .metrics import RunTrace, WindowSnapshot
from .simulator import RewardWeights, SystemState, WorkloadSchedule, apply_event, graph_index, initial_state, step
from .topology import DependencyGraph, EventKind, TopologyEvent
from .training import (
    CriticBank,
    LearnerParams,
    ReplayBuffer,
    TrainingConfig,
    Transition,
    _gather,
    _stacks,
    load_checkpoint,
    observations,
    save_checkpoint,
    train_epoch,
)

log = logging.getLogger(__name__)

LEARNING_MODES = ("full", "no_evolution", "no_embedding")
FIXED_MODES = ("random_policy", "static_policy")


@dataclass
class World:
    """Everything about the environment that does not learn."""

    graph: DependencyGraph
    schedule: WorkloadSchedule
    events: list  # TopologyEvent, at_time in seconds
    slots: int
    governed: np.ndarray  # bool (slots,): services that carry an agent
    role: np.ndarray  # int (slots,): layer of every governed slot, -1 elsewhere
    layers: int
    weights: RewardWeights = field(default_factory=RewardWeights)
    initial_replicas: int = 1
    disturbance: tuple | None = None  # (first window, end window exclusive)

    def events_by_window(self) -> dict:
        out: dict = {}
        for ev in self.events:
            k = int(math.floor(ev.at_time / self.schedule.window_length + 1e-9))
            out.setdefault(k, []).append(ev)
        return out


@dataclass
class EpisodeResult:
    rewards: np.ndarray  # (T, slots), NaN where no agent acted
    acted: np.ndarray  # (slots,) bool, acted at least once
    trace: RunTrace | None = None
    actions: np.ndarray | None = None  # (T, slots)


@dataclass
class GenerationLog:
    generation: int
    role: int
    strategy: int
    share: float
    fitness: float


def _snapshot(k: int, state: SystemState, reward: np.ndarray) -> WindowSnapshot:
    idx = graph_index(state.graph, state.num_slots)
    live = idx.live
    unit = idx.cpu_unit[live]
    reps = state.replicas[live]
    r = reward[np.isfinite(reward)]
    return WindowSnapshot(
        window=k,
        cpu_cost=float(np.mean(reps * unit)),
        cpu_ideal=float(np.mean(unit)),
        cpu_worst=float(np.mean(idx.max_replicas[live] * unit)),
        replicas=float(np.mean(reps)),
        mean_reward=float(r.mean()) if r.size else 0.0,
    )


class GovernanceRun:
    def __init__(self, world: World, seed: int, mode: str = "full", *,
                 training: TrainingConfig = TrainingConfig(),
                 evolution: EvolutionConfig = EvolutionConfig(),
                 embedding_dims=(4, 16, 8), init_scale: float = 0.1, init_bias_scale: float = 1.0,
                 init_noop_bias: float = 0.0):
        if mode not in LEARNING_MODES + FIXED_MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.world = world
        self.seed = int(seed)
        self.mode = mode
        self.training = training
        self.evolution = replace(evolution, frozen=True) if mode == "no_evolution" else evolution
        obs_dim = LOCAL_FEATURES + int(embedding_dims[-1])
        pops = []
        for r in range(world.layers):
            g = rngs.stream(seed, rngs.PORTFOLIO, r)
            portfolio = []
            for _ in range(evolution.portfolio_size):
                p = PolicyParameters.random(obs_dim, g, init_scale, bias_scale=init_bias_scale)
                p.bias[Action.NOOP] += init_noop_bias
                portfolio.append(p)
            pops.append(StrategyPopulation.uniform(portfolio))
        emb_seed = int(rngs.stream(seed, rngs.EMBEDDING).integers(2**31 - 1))
        self.params = LearnerParams(pops, CriticBank.zeros(world.slots, obs_dim),
                                    init_weights(embedding_dims, emb_seed), use_embedding=mode != "no_embedding")
        self.buffer = ReplayBuffer(training.buffer_capacity)
        self.train_rng = rngs.stream(seed, rngs.TRAINING)
        self.generation = 0
        self.share_history = [[p.shares.copy() for p in pops]]
        self.history: list[GenerationLog] = []
        self._events = world.events_by_window()

    # ------------------------------------------------------------ episodes

    @property
    def learns(self) -> bool:
        return self.mode in LEARNING_MODES

    def sample_assignment(self, g: np.random.Generator) -> np.ndarray:
        """Strategy index per slot drawn from the role shares (-1 off the governed set)."""
        u = g.random(self.world.slots)
        out = np.full(self.world.slots, -1)
        for r, pop in enumerate(self.params.populations):
            m = self.world.role == r
            out[m] = sample_strategies(pop.shares, u[m])
        return out

    def focal_mask(self, g: np.random.Generator) -> np.ndarray:
        mask = np.zeros(self.world.slots, dtype=bool)
        perm = g.permutation(self.world.slots)
        for r in range(self.world.layers):
            members = perm[self.world.role[perm] == r]
            if members.size:
                m = max(1, int(round(self.evolution.focal_fraction * members.size)))
                mask[members[:m]] = True
        return mask

    def episode(self, strategy: np.ndarray, seed: int, *, collect: bool = False,
                record: bool = False) -> EpisodeResult:
        w = self.world
        T = w.schedule.num_windows
        g = np.random.default_rng(seed)
        env_seeds = g.integers(2**63 - 1, size=T)
        U = g.random((T, w.slots))
        slo = w.weights.slo_target
        state = initial_state(w.graph, w.schedule, w.slots, np.random.default_rng(0), w.initial_replicas)
        d = self.params.obs_dim
        if self.mode not in FIXED_MODES:
            Ws, bs = _stacks(self.params.populations)
            W, b = _gather(Ws, bs, w.role, strategy, d)
        rewards = np.full((T, w.slots), np.nan)
        actions_log = np.full((T, w.slots), -1)
        trace = RunTrace(window_length=w.schedule.window_length) if record else None
        slot_role = np.where(w.governed, w.role, -1)
        for k in range(T):
            for ev in self._events.get(k, ()):
                state = apply_event(state, ev)
                if trace is not None:
                    trace.events.append((k, ev.to_json()))
            state = replace(state, rng_state=np.random.PCG64(int(env_seeds[k])).state)
            acting = w.governed & graph_index(state.graph, w.slots).live_mask
            X = state.local_features(slo)
            if self.mode == "static_policy":
                a = np.where(acting, int(Action.NOOP), -1)
            elif self.mode == "random_policy":
                a = np.where(acting, np.minimum((U[k] * NUM_ACTIONS).astype(int), NUM_ACTIONS - 1), -1)
            else:
                obs = observations(self.params, state.graph, X)
                a = np.where(acting, act_batch(W, b, obs, U[k]), -1)
            out = step(state, a, w.schedule, w.weights, with_records=record)
            rewards[k] = out.reward_array
            actions_log[k] = a
            if collect:
                self.buffer.push(Transition(
                    X, a, out.reward_array, out.next_state.local_features(slo), k == T - 1,
                    np.where(acting, strategy, -1), np.where(acting, slot_role, -1),
                    state.graph, out.next_state.graph))
            if trace is not None:
                trace.records.extend(out.trace_records)
                trace.windows.append(_snapshot(k, out.next_state, out.reward_array))
            state = out.next_state
        acted = (actions_log >= 0).any(axis=0)
        return EpisodeResult(rewards, acted, trace, actions_log)

    # ------------------------------------------------------------ generations

    def fitness(self, g: int) -> np.ndarray:
        """(n strategies, roles) mean normalised discounted return of focal agents."""
        w = self.world
        n = self.evolution.portfolio_size
        E = self.evolution.eval_episodes_per_strategy
        F = np.zeros((E, n, w.layers))
        # discounted return over the discount mass: a weighted mean reward,
        # so fitness lives on the per-window reward scale
        gam, T = self.training.gamma, w.schedule.num_windows
        norm = (1.0 - gam) / (1.0 - gam**T)
        for e in range(E):
            r_ = rngs.stream(self.seed, rngs.GENERATION, g, e)
            base = self.sample_assignment(r_)
            focal = self.focal_mask(r_)
            perms = np.stack([r_.permutation(n) for _ in range(w.layers)])  # (roles, n)
            ep_seed = int(r_.integers(2**63 - 1))
            for k in range(n):
                asg = base.copy()
                for role in range(w.layers):
                    m = focal & (w.role == role)
                    asg[m] = perms[role, k]
                res = self.episode(asg, ep_seed, collect=True)
                ret = discounted_returns(res.rewards, self.training.gamma) * norm
                if self.evolution.fitness_target == "welfare":
                    # one system-level payoff shared by every role's k-th strategy
                    F[e, perms[:, k], np.arange(w.layers)] = ret[res.acted].mean() if res.acted.any() else 0.0
                    continue
                for role in range(w.layers):
                    in_role = res.acted & (w.role == role)
                    m = focal & in_role
                    f = ret[m].mean() if m.any() else 0.0
                    ctrl = in_role & ~focal
                    if self.evolution.fitness_control and ctrl.any():
                        f -= ret[ctrl].mean()
                    F[e, perms[role, k], role] = f
        return F.mean(axis=0)

    def run_generation(self):
        g = self.generation
        cfg = self.training
        if cfg.epochs_per_generation > 0 and len(self.buffer) >= cfg.batch_size:
            for _ in range(cfg.epochs_per_generation):
                self.params = train_epoch(self.params, self.buffer, cfg, self.train_rng)
        f = self.fitness(g)
        pops = []
        for r, pop in enumerate(self.params.populations):
            new = advance_shares(pop, f[:, r], self.evolution, rngs.stream(self.seed, rngs.EVOLUTION, g, r),
                                 self.evolution.eval_episodes_per_strategy, g)
            pops.append(new)
            for k in range(new.size):
                self.history.append(GenerationLog(g, r, k, float(new.shares[k]), float(f[k, r])))
        self.params.populations = pops
        self.share_history.append([p.shares.copy() for p in pops])
        self.generation += 1
        log.debug("seed %d mode %s generation %d mean fitness %.4f", self.seed, self.mode, g,
                  float(np.mean([p.shares @ p.fitness for p in pops])))

    def train(self, generations: int | None = None):
        if not self.learns:
            return self
        todo = self.evolution.generations if generations is None else generations
        for _ in range(todo):
            self.run_generation()
        return self

    def evaluate(self, episodes: int = 1) -> RunTrace:
        """Evaluation episodes merged into one trace (records and per-window snapshots averaged)."""
        merged = RunTrace(window_length=self.world.schedule.window_length)
        snaps = []
        for e in range(episodes):
            r_ = rngs.stream(self.seed, rngs.EVALUATION, e)
            asg = self.sample_assignment(r_)
            res = self.episode(asg, int(r_.integers(2**63 - 1)), record=True)
            merged.records.extend(res.trace.records)
            if e == 0:
                merged.events = res.trace.events
            snaps.append(res.trace.windows)
        for k in range(len(snaps[0])):
            rows = [s[k] for s in snaps]
            merged.windows.append(WindowSnapshot(
                k, *(float(np.mean([getattr(r, f) for r in rows]))
                     for f in ("cpu_cost", "cpu_ideal", "cpu_worst", "replicas", "mean_reward"))))
        return merged

    @property
    def wall_per_generation(self) -> float:
        """Simulated seconds of one generation (one episode horizon)."""
        return self.world.schedule.horizon

    # ------------------------------------------------------------ checkpoints

    def state_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "generation": self.generation,
            "params": self.params,
            "buffer": list(self.buffer.items),
            "buffer_inserted": self.buffer.inserted,
            "train_rng": self.train_rng.bit_generator.state,
            "share_history": self.share_history,
            "history": self.history,
        }

    def load_state_dict(self, d: dict):
        if d["seed"] != self.seed or d["mode"] != self.mode:
            raise ValueError("checkpoint belongs to a different seed or mode")
        self.generation = d["generation"]
        self.params = d["params"]
        self.buffer = ReplayBuffer(self.training.buffer_capacity)
        for t in d["buffer"]:
            self.buffer.push(t)
        self.buffer.inserted = d["buffer_inserted"]
        self.train_rng = rngs.generator_from_state(d["train_rng"])
        self.share_history = d["share_history"]
        self.history = d["history"]

    def save(self, path):
        save_checkpoint(path, self.state_dict())

    def restore(self, path):
        self.load_state_dict(load_checkpoint(path))
        return self


def governed_roles(graph: DependencyGraph, events, governed_ids, slots: int):
    """Governed mask and role (layer) per slot, including services added by events."""
    governed = np.zeros(slots, dtype=bool)
    role = np.full(slots, -1)
    specs = dict(graph.node_attrs)
    for ev in events:
        if ev.kind is EventKind.ADD_SERVICE:
            specs[ev.service] = ev.spec
    for v in governed_ids:
        governed[v] = True
        role[v] = specs[v].layer
    return governed, role


__all__ = ["World", "GovernanceRun", "EpisodeResult", "GenerationLog", "governed_roles", "TopologyEvent"]
