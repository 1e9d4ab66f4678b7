"""Centralized training: replay buffer, per-agent linear critics, policy gradient.

Critic features for agent i are::

    phi_i(s, a) = [ global state features | one-hot(joint action) | one-hot(a_i) (x) o_i ]

The first two blocks follow the joint-value form Q_i(s, a_1..a_n); the last
block (own action crossed with own observation) lets a linear critic rank the
agent's own actions differently in different states, and is the path through
which the critic loss reaches the embedding weights.

Actors see only their local observation o_i; only this module reads the
global state and the joint action.
"""

from __future__ import annotations

import pickle
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import NUM_ACTIONS, PolicyParameters, action_probabilities, grad_log_prob, sample_index, softmax
from .embedding import LayerWeights, embed_backward, embed_slots_batch, slot_propagation
from .evolution import StrategyPopulation
from .topology import DependencyGraph

CHECKPOINT_FORMAT = "swarm_gov.checkpoint"
CHECKPOINT_VERSION = 1
BASELINES = ("batch_mean", "counterfactual", "none")


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 0.9
    critic_lr: float = 1e-2
    actor_lr: float = 1e-3
    embedding_lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 10_000
    epochs_per_generation: int = 5
    # advantage baseline: "batch_mean" (mean Q over the batch), "counterfactual"
    # (expected Q over the agent's own policy, other actions held fixed) or "none"
    baseline: str = "batch_mean"
    # weight of the policy-entropy bonus in the actor objective; 0 gives the
    # plain policy gradient. It bounds the logits near softmax(Q / coef), so a
    # policy cannot saturate on an early, unfitted critic.
    entropy_coef: float = 0.0

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise TrainingError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.entropy_coef < 0:
            raise TrainingError(f"entropy_coef must be >= 0, got {self.entropy_coef}")
        if not 0.0 < self.gamma < 1.0:
            raise TrainingError(f"gamma must lie in the open interval (0, 1), got {self.gamma}")


@dataclass(eq=False)
class Transition:
    global_state_features: np.ndarray  # (slots, 4)
    joint_action: np.ndarray  # (slots,) action index, -1 where no agent acted
    per_agent_rewards: np.ndarray  # (slots,) NaN where no agent
    next_global_state_features: np.ndarray
    done: bool
    strategy: np.ndarray = None  # (slots,) portfolio index each agent used, -1 none
    role: np.ndarray = None  # (slots,) role of each agent, -1 none
    graph: DependencyGraph = field(default=None, repr=False)
    next_graph: DependencyGraph = field(default=None, repr=False)

    def __post_init__(self):
        slots = self.joint_action.shape[0]
        if self.strategy is None:
            self.strategy = np.where(self.joint_action >= 0, 0, -1)
        if self.role is None:
            self.role = np.where(self.joint_action >= 0, 0, -1)
        if self.global_state_features.shape != self.next_global_state_features.shape:
            raise TrainingError("state and next-state features differ in shape")
        for name in ("per_agent_rewards", "strategy", "role"):
            if getattr(self, name).shape != (slots,):
                raise TrainingError(f"{name} must have one entry per slot")
        acted = self.joint_action >= 0
        if not np.all(np.isfinite(self.per_agent_rewards[acted])):
            raise TrainingError("rewards must be finite for every acting agent")

    @property
    def flat_state(self) -> np.ndarray:
        return self.global_state_features.ravel()

    @property
    def agents(self) -> list[int]:
        return np.flatnonzero(self.joint_action >= 0).tolist()

    def dims(self):
        return (self.global_state_features.shape, self.joint_action.shape)


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise TrainingError("capacity must be >= 1")
        self.capacity = capacity
        self.items: deque = deque(maxlen=capacity)
        self.inserted = 0

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    def push(self, t: Transition) -> "ReplayBuffer":
        if self.items and t.dims() != self.items[0].dims():
            raise TrainingError(f"transition dimensions {t.dims()} differ from buffer's {self.items[0].dims()}")
        self.items.append(t)
        self.inserted += 1
        return self


def push_transition(buf: ReplayBuffer, t: Transition) -> ReplayBuffer:
    return buf.push(t)


def sample_batch(buf: ReplayBuffer, n: int, rng: np.random.Generator) -> list:
    if len(buf) == 0:
        raise TrainingError("cannot sample from an empty buffer")
    if n < 1:
        raise TrainingError("batch size must be >= 1")
    idx = rng.integers(0, len(buf), size=n)
    return [buf.items[i] for i in idx]


# ---------------------------------------------------------------- critic


@dataclass
class CriticParameters:
    weights: np.ndarray
    bias: float = 0.0

    def copy(self) -> "CriticParameters":
        return CriticParameters(self.weights.copy(), float(self.bias))


def critic_dim(slots: int, obs_dim: int, num_actions: int = NUM_ACTIONS, local: int = 4) -> int:
    return slots * local + slots * num_actions + num_actions * obs_dim


def critic_features(state: np.ndarray, joint_action: np.ndarray, own_action: int | None = None,
                    own_obs: np.ndarray | None = None, obs_dim: int = 0,
                    num_actions: int = NUM_ACTIONS) -> np.ndarray:
    state = np.asarray(state, dtype=float).ravel()
    joint_action = np.asarray(joint_action, dtype=int)
    onehot = np.zeros((joint_action.size, num_actions))
    acted = joint_action >= 0
    onehot[np.flatnonzero(acted), joint_action[acted]] = 1.0
    if own_obs is not None:
        obs_dim = len(own_obs)
    cross = np.zeros((num_actions, obs_dim))
    if own_action is not None and own_action >= 0 and own_obs is not None:
        cross[own_action] = own_obs
    return np.concatenate([state, onehot.ravel(), cross.ravel()])


def critic_eval(c: CriticParameters, state: np.ndarray, joint_action: np.ndarray,
                agent: int | None = None, own_obs: np.ndarray | None = None) -> float:
    obs_dim = _critic_obs_dim(c, np.asarray(state).size, np.asarray(joint_action).size)
    if own_obs is not None and len(own_obs) != obs_dim:
        raise TrainingError(f"observation has dimension {len(own_obs)}, critic expects {obs_dim}")
    own_action = None if agent is None else int(np.asarray(joint_action)[agent])
    phi = critic_features(state, joint_action, own_action, own_obs, obs_dim)
    if phi.size != c.weights.size:
        raise TrainingError(f"feature dimension {phi.size} does not match critic {c.weights.size}")
    return float(phi @ c.weights + c.bias)


def _critic_obs_dim(c: CriticParameters, state_size: int, slots: int) -> int:
    rest = c.weights.size - state_size - slots * NUM_ACTIONS
    if rest < 0 or rest % NUM_ACTIONS:
        raise TrainingError(f"critic of size {c.weights.size} does not fit state {state_size} / {slots} slots")
    return rest // NUM_ACTIONS


@dataclass
class CriticBatch:
    phi: np.ndarray  # (B, D)
    reward: np.ndarray  # (B,)
    next_phi: np.ndarray  # (B, D)
    done: np.ndarray  # (B,) bool


def critic_update(c: CriticParameters, batch: CriticBatch, gamma: float, lr: float) -> CriticParameters:
    """One normalised gradient step on the mean squared TD(0) error.

    The step is divided by the mean squared feature norm (plus one for the
    bias), so a learning rate in (0, 1) cannot overshoot regardless of the
    feature scale. The target is held fixed (semi-gradient).
    """
    q = batch.phi @ c.weights + c.bias
    q_next = batch.next_phi @ c.weights + c.bias
    target = batch.reward + gamma * np.where(batch.done, 0.0, q_next)
    delta = q - target
    norm = np.mean(np.sum(batch.phi**2, axis=1)) + 1.0
    gw = batch.phi.T @ delta / len(delta)
    gb = float(np.mean(delta))
    return CriticParameters(c.weights - lr * gw / norm, c.bias - lr * gb / norm)


@dataclass
class CriticBank:
    """All per-agent critics, one row per service slot."""

    weights: np.ndarray  # (slots, D)
    bias: np.ndarray  # (slots,)
    obs_dim: int
    local: int = 4

    @classmethod
    def zeros(cls, slots: int, obs_dim: int, local: int = 4) -> "CriticBank":
        return cls(np.zeros((slots, critic_dim(slots, obs_dim, local=local))), np.zeros(slots), obs_dim, local)

    @property
    def slots(self) -> int:
        return self.weights.shape[0]

    def agent(self, i: int) -> CriticParameters:
        return CriticParameters(self.weights[i].copy(), float(self.bias[i]))

    def copy(self) -> "CriticBank":
        return CriticBank(self.weights.copy(), self.bias.copy(), self.obs_dim, self.local)

    def _split(self):
        ds = self.slots * self.local + self.slots * NUM_ACTIONS
        return ds, self.weights[:, :ds], self.weights[:, ds:].reshape(self.slots, NUM_ACTIONS, self.obs_dim)

    def shared_features(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """(B, slots*local + slots*A) block common to every agent's features."""
        B = states.shape[0]
        onehot = np.zeros((B, self.slots, NUM_ACTIONS))
        b, i = np.nonzero(actions >= 0)
        onehot[b, i, actions[b, i]] = 1.0
        return np.concatenate([states.reshape(B, -1), onehot.reshape(B, -1)], axis=1)

    def values(self, shared: np.ndarray, actions: np.ndarray, obs: np.ndarray) -> np.ndarray:
        """Q_i for every (batch row, slot): shared (B, Ds), actions (B, slots), obs (B, slots, d)."""
        _, ws, u = self._split()
        q = shared @ ws.T + self.bias
        own = u[np.arange(self.slots)[None, :], np.maximum(actions, 0)]  # (B, slots, d)
        q += np.where(actions >= 0, np.einsum("bnd,bnd->bn", own, obs), 0.0)
        return q

    def own_action_weights(self, actions: np.ndarray) -> np.ndarray:
        _, _, u = self._split()
        return u[np.arange(self.slots)[None, :], np.maximum(actions, 0)]


# ---------------------------------------------------------------- actor


def policy_gradient(theta: PolicyParameters, obs: np.ndarray, actions: np.ndarray,
                    advantages: np.ndarray):
    """Batch mean of grad log pi(a|o) * advantage; returns (dW, db)."""
    dW, db = grad_log_prob(theta, obs, actions)
    adv = np.asarray(advantages, dtype=float)
    return np.einsum("b,bda->da", adv, dW) / len(adv), adv @ db / len(adv)


def policy_gradient_step(theta: PolicyParameters, obs: np.ndarray, actions: np.ndarray,
                         q_values: np.ndarray, lr: float, baseline: bool = True) -> PolicyParameters:
    """Ascent step on E[grad log pi(a|o) (Q - b)], with b the batch-mean Q (0 when ``baseline`` is off)."""
    q = np.asarray(q_values, dtype=float)
    adv = q - q.mean() if baseline else q
    dW, db = policy_gradient(theta, obs, actions, adv)
    return PolicyParameters(theta.weights + lr * dW, theta.bias + lr * db)


def sampled_objective(theta: PolicyParameters, obs: np.ndarray, actions: np.ndarray,
                      advantages: np.ndarray) -> float:
    """mean log pi(a|o) * advantage; its gradient is ``policy_gradient``."""
    p = action_probabilities(theta, obs)
    return float(np.mean(np.log(p[np.arange(len(actions)), actions]) * advantages))


# ---------------------------------------------------------------- joint parameters


@dataclass
class LearnerParams:
    populations: list  # StrategyPopulation per role
    critics: CriticBank
    embedding: LayerWeights
    use_embedding: bool = True

    def copy(self) -> "LearnerParams":
        return LearnerParams([p.copy() for p in self.populations], self.critics.copy(),
                             self.embedding.copy(), self.use_embedding)

    @property
    def obs_dim(self) -> int:
        return self.critics.obs_dim


def observations(params: LearnerParams, graph: DependencyGraph, X: np.ndarray) -> np.ndarray:
    """Observation rows for every slot of one state: local features then embedding."""
    from .embedding import embed_slots

    if not params.use_embedding:
        return np.concatenate([X, np.zeros((X.shape[0], params.embedding.out_dim))], axis=1)
    P = slot_propagation(graph, X.shape[0])
    return np.concatenate([X, embed_slots(P, X, params.embedding)], axis=1)


def _batch_observations(params: LearnerParams, graphs: Sequence[DependencyGraph], X: np.ndarray):
    """Observations for a batch whose rows may use different graphs; returns (obs, groups)."""
    B, n, _ = X.shape
    emb_dim = params.embedding.out_dim
    E = np.zeros((B, n, emb_dim))
    groups = []
    if params.use_embedding:
        by_graph: dict = {}
        for b, g in enumerate(graphs):
            by_graph.setdefault(id(g), (g, []))[1].append(b)
        for g, rows in by_graph.values():
            P = slot_propagation(g, n)
            out, tape = embed_slots_batch(P, X[rows], params.embedding)
            E[rows] = out
            groups.append((P, rows, tape))
    return np.concatenate([X, E], axis=2), groups


def _stacks(populations):
    Ws = [np.stack([p.weights for p in pop.portfolio]) for pop in populations]
    bs = [np.stack([p.bias for p in pop.portfolio]) for pop in populations]
    return Ws, bs


def _gather(Ws, bs, role: np.ndarray, strat: np.ndarray, d: int):
    """Per-(row, slot) policy parameters; entries with role < 0 get zeros."""
    shape = role.shape
    W = np.zeros(shape + (d, NUM_ACTIONS))
    b = np.zeros(shape + (NUM_ACTIONS,))
    for r in range(len(Ws)):
        m = (role == r) & (strat >= 0)
        if np.any(m):
            W[m] = Ws[r][strat[m]]
            b[m] = bs[r][strat[m]]
    return W, b


def train_epoch(params: LearnerParams, buffer: ReplayBuffer, cfg: TrainingConfig,
                rng: np.random.Generator) -> LearnerParams:
    """One critic update and one policy-gradient step per agent, agents in ascending id order.

    The embedding weights take one step on the agents' mean critic loss,
    backpropagated through the observation path.
    """
    if len(buffer) < cfg.batch_size:
        raise TrainingError(f"buffer holds {len(buffer)} transitions, batch needs {cfg.batch_size}")
    new = params.copy()
    batch = sample_batch(buffer, cfg.batch_size, rng)
    B = len(batch)
    S = np.stack([t.global_state_features for t in batch])
    S2 = np.stack([t.next_global_state_features for t in batch])
    A = np.stack([t.joint_action for t in batch])
    R = np.stack([t.per_agent_rewards for t in batch])
    strat = np.stack([t.strategy for t in batch])
    role = np.stack([t.role for t in batch])
    done = np.array([t.done for t in batch])
    d = new.obs_dim

    obs, groups = _batch_observations(params, [t.graph for t in batch], S)
    obs2, _ = _batch_observations(params, [t.next_graph for t in batch], S2)

    # next joint action from the current policies, same strategy assignment
    Ws, bs = _stacks(params.populations)
    live_next = np.stack([_live_mask(t.next_graph, S.shape[1]) for t in batch])
    next_role = np.where(live_next, role, -1)
    W2, b2 = _gather(Ws, bs, next_role, strat, d)
    probs2 = softmax(np.einsum("bnd,bnda->bna", obs2, W2) + b2)
    u = rng.random(A.shape)
    A2 = np.where(next_role >= 0, sample_index(probs2, u), -1)

    crit = new.critics
    acted = A >= 0
    count = acted.sum(axis=0)
    has = count > 0
    n = np.maximum(count, 1)
    onehot_own = np.zeros((B, crit.slots, NUM_ACTIONS))
    bi, ii = np.nonzero(acted)
    onehot_own[bi, ii, A[bi, ii]] = 1.0
    shared = crit.shared_features(S, A)
    q = crit.values(shared, A, obs)
    q2 = crit.values(crit.shared_features(S2, A2), A2, obs2)
    target = np.nan_to_num(R) + cfg.gamma * np.where(done[:, None], 0.0, q2)
    delta = np.where(acted, q - target, 0.0)
    own_w = crit.own_action_weights(A)  # pre-update dQ/d(obs), for the embedding gradient

    # The step is taken in feature coordinates centred on the batch means, so
    # a uniform shift in the TD error lands on the bias instead of on the
    # most frequent action. The own-action block splits into an action-free
    # part (the agent's observation alone) and the centred action contrasts.
    # Each of the four blocks (state, joint action, observation, contrasts)
    # gets lr/4 over its mean squared norm, one independent regression per
    # agent. The centred step is then mapped back onto the raw parameters,
    # which one-hot blocks summing to one make exact.
    js = crit.slots * crit.local
    ds, _, _ = crit._split()
    mu = shared.mean(axis=0)
    pbar = onehot_own.sum(axis=0) / n[:, None]  # (slots, A)
    fc = shared - mu
    cross = onehot_own - pbar[None]
    norm_state = np.where(acted, np.sum(fc[:, :js] ** 2, axis=1)[:, None], 0.0).sum(axis=0) / n + 1.0
    norm_joint = np.where(acted, np.sum(fc[:, js:] ** 2, axis=1)[:, None], 0.0).sum(axis=0) / n + 1.0
    norm_cross = (np.where(acted, np.sum(obs**2, axis=2) * np.sum(cross**2, axis=2), 0.0).sum(axis=0)
                  / n + 1.0)
    norm_obs = np.where(acted, np.sum(obs**2, axis=2), 0.0).sum(axis=0) / n + 1.0
    base = np.where(has, cfg.critic_lr / (4.0 * n), 0.0)
    g_shared = delta.T @ fc  # (slots, Ds)
    d_shared = np.empty_like(g_shared)
    d_shared[:, :js] = -(base / norm_state)[:, None] * g_shared[:, :js]
    d_shared[:, js:] = -(base / norm_joint)[:, None] * g_shared[:, js:]
    d_cross = -(base / norm_cross)[:, None, None] * np.einsum("bn,bna,bnd->nad", delta, cross, obs)
    d_cross -= np.einsum("na,nad->nd", pbar, d_cross)[:, None, :]
    d_cross -= ((base / norm_obs)[:, None] * np.einsum("bn,bnd->nd", delta, obs))[:, None, :]
    crit.weights[:, :ds] += d_shared
    crit.weights[:, ds:] += d_cross.reshape(crit.slots, -1)
    crit.bias += -base * delta.sum(axis=0) - d_shared @ mu

    # embedding step on the mean (over agents) critic loss
    if params.use_embedding and cfg.embedding_lr > 0 and groups and np.any(has):
        n_agents = int(has.sum())
        coef = np.where(acted, delta / np.maximum(count, 1)[None, :], 0.0) / n_agents
        d_obs = coef[:, :, None] * own_w  # dL/d obs
        d_emb = d_obs[:, :, S.shape[2]:]
        grads = [np.zeros_like(m) for m in params.embedding.matrices]
        for P, rows, tape in groups:
            for k, gk in enumerate(embed_backward(P, tape, d_emb[rows], params.embedding)):
                grads[k] += gk
        for k, gk in enumerate(grads):
            new.embedding.matrices[k] = new.embedding.matrices[k] - cfg.embedding_lr * gk

    # actor steps with the updated critic
    if cfg.actor_lr > 0:
        q_new = crit.values(shared, A, obs)
        joint0 = crit.slots * crit.local
        _, _, u_new = crit._split()
        Ws_new = [w.copy() for w in Ws]
        bs_new = [b.copy() for b in bs]
        for i in np.flatnonzero(has):
            rows = np.flatnonzero(acted[:, i])
            qi = q_new[rows, i]
            r_i = role[rows, i]
            k_i = strat[rows, i]
            o_i = obs[rows, i]
            a_i = A[rows, i]
            if cfg.baseline == "counterfactual":
                # Q_i with agent i's action swapped to each alternative, everything else fixed
                own = crit.weights[i, joint0 + i * NUM_ACTIONS: joint0 + (i + 1) * NUM_ACTIONS]
                c = own[None, :] + o_i @ u_new[i].T  # (rows, A), up to a per-row constant
            # advantages larger than unit RMS are shrunk to it, so an
            # unfitted critic cannot saturate the policy in a few steps
            scale = 1.0
            if cfg.baseline == "counterfactual":
                pa = _row_probs(Ws_new, bs_new, r_i, k_i, o_i)
                full = c[np.arange(len(rows)), a_i] - np.sum(pa * c, axis=1)
                scale = max(1.0, float(np.sqrt(np.mean(full**2))))
            elif cfg.baseline == "batch_mean":
                scale = max(1.0, float(qi.std()))
            for r in np.unique(r_i):
                m = r_i == r
                W = Ws_new[r][k_i[m]]
                bias = bs_new[r][k_i[m]]
                p = softmax(np.einsum("bd,bda->ba", o_i[m], W) + bias)
                if cfg.baseline == "counterfactual":
                    cm = c[m]
                    adv_m = cm[np.arange(m.sum()), a_i[m]] - np.sum(p * cm, axis=1)
                elif cfg.baseline == "batch_mean":
                    adv_m = (qi - qi.mean())[m]
                else:
                    adv_m = qi[m]
                adv_m = adv_m / scale
                resid = -p
                resid[np.arange(m.sum()), a_i[m]] += 1.0
                g_b = adv_m[:, None] * resid
                if cfg.entropy_coef > 0:
                    logp = np.log(np.maximum(p, 1e-300))
                    ent = -np.sum(p * logp, axis=1, keepdims=True)
                    g_b -= cfg.entropy_coef * p * (logp + ent)
                g_b /= len(rows)
                g_W = o_i[m][:, :, None] * g_b[:, None, :]
                np.add.at(Ws_new[r], k_i[m], cfg.actor_lr * g_W)
                np.add.at(bs_new[r], k_i[m], cfg.actor_lr * g_b)
        for r, pop in enumerate(new.populations):
            pop.portfolio = [PolicyParameters(Ws_new[r][k], bs_new[r][k]) for k in range(pop.size)]
    return new


def _row_probs(Ws, bs, r_i, k_i, o_i):
    W = np.stack([Ws[r][k] for r, k in zip(r_i, k_i)])
    b = np.stack([bs[r][k] for r, k in zip(r_i, k_i)])
    return softmax(np.einsum("bd,bda->ba", o_i, W) + b)


def _live_mask(g: DependencyGraph, slots: int) -> np.ndarray:
    m = np.zeros(slots, dtype=bool)
    m[list(g.nodes)] = True
    return m


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, payload: dict):
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "payload": payload}
    with open(path, "wb") as fh:
        pickle.dump(doc, fh, protocol=pickle.HIGHEST_PROTOCOL)


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        doc = pickle.load(fh)
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"{path} is not a checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {doc.get('version')}")
    return doc["payload"]
