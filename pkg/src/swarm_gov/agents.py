"""Decentralized execution: observations, linear-softmax policies, returns.

At run time an agent only touches its own parameters, its own observation
and a random generator; nothing here can reach a critic or another agent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .simulator import SystemState

LOCAL_FEATURES = 4


class Action(IntEnum):
    SCALE_UP = 0
    SCALE_DOWN = 1
    THROTTLE_ADMISSION = 2
    RELAX_ADMISSION = 3
    NOOP = 4


NUM_ACTIONS = len(Action)


@dataclass
class PolicyParameters:
    weights: np.ndarray  # (obs_dim, num_actions)
    bias: np.ndarray  # (num_actions,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"policy shapes do not match: weights {self.weights.shape}, bias {self.bias.shape}"
            )

    @property
    def obs_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_actions(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, obs_dim: int, num_actions: int = NUM_ACTIONS) -> "PolicyParameters":
        return cls(np.zeros((obs_dim, num_actions)), np.zeros(num_actions))

    @classmethod
    def random(cls, obs_dim: int, rng: np.random.Generator, scale: float = 1.0,
               num_actions: int = NUM_ACTIONS, bias_scale: float | None = None) -> "PolicyParameters":
        """Gaussian weights (std ``scale``) and bias (std ``bias_scale``, default ``scale``)."""
        bias_scale = scale if bias_scale is None else bias_scale
        return cls(scale * rng.standard_normal((obs_dim, num_actions)),
                   bias_scale * rng.standard_normal(num_actions))

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(self.weights.copy(), self.bias.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_flat(cls, v: np.ndarray, obs_dim: int, num_actions: int) -> "PolicyParameters":
        v = np.asarray(v, dtype=float)
        k = obs_dim * num_actions
        return cls(v[:k].reshape(obs_dim, num_actions), v[k:].copy())

    def __eq__(self, other):
        if not isinstance(other, PolicyParameters):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)


@dataclass(frozen=True)
class ReturnEstimate:
    value: float
    gamma: float

    def __post_init__(self):
        _check_gamma(self.gamma)


def _check_gamma(gamma: float):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in the open interval (0, 1), got {gamma}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def logits(theta: PolicyParameters, o: np.ndarray) -> np.ndarray:
    o = np.asarray(o, dtype=float)
    if o.shape[-1] != theta.obs_dim:
        raise ValueError(f"observation has dimension {o.shape[-1]}, policy expects {theta.obs_dim}")
    z = o @ theta.weights + theta.bias
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return z


def action_probabilities(theta: PolicyParameters, o: np.ndarray) -> np.ndarray:
    return softmax(logits(theta, o))


def sample_index(probs: np.ndarray, u: np.ndarray | float) -> np.ndarray:
    """Inverse-CDF draw over the fixed action ordering; ``u`` uniform on [0, 1)."""
    cdf = np.cumsum(probs, axis=-1)
    u = np.asarray(u)[..., None]
    idx = np.sum(cdf <= u * cdf[..., -1:], axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def act(theta: PolicyParameters, o: np.ndarray, rng: np.random.Generator) -> Action | int:
    p = action_probabilities(theta, o)
    i = int(sample_index(p, rng.random()))
    return Action(i) if theta.num_actions == NUM_ACTIONS else i


def act_batch(weights: np.ndarray, bias: np.ndarray, obs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised ``act`` for many agents: weights (n, d, A), bias (n, A), obs (n, d), u (n,)."""
    z = np.einsum("nd,nda->na", obs, weights) + bias
    return sample_index(softmax(z), u)


def grad_log_prob(theta: PolicyParameters, o: np.ndarray, a: np.ndarray):
    """Closed-form gradient of log pi(a|o) for a batch: returns (dW (B,d,A), db (B,A))."""
    o = np.atleast_2d(np.asarray(o, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=int))
    p = action_probabilities(theta, o)
    resid = -p
    resid[np.arange(len(a)), a] += 1.0
    return o[:, :, None] * resid[:, None, :], resid


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    _check_gamma(gamma)
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        return 0.0
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    return float(np.sum(gamma ** np.arange(r.size) * r))


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-column discounted return of a (T, n) reward matrix; NaN entries are skipped."""
    _check_gamma(gamma)
    r = np.nan_to_num(np.asarray(rewards, dtype=float), nan=0.0)
    w = gamma ** np.arange(r.shape[0])
    return w @ r


def observe(s: "SystemState", embeddings: np.ndarray, agent: int, slo_target: float) -> np.ndarray:
    """Own local features followed by the agent's embedding row.

    ``embeddings`` is slot-indexed (row = service id). Pure function.
    """
    if agent not in s.graph.nodes:
        raise ValueError(f"service {agent} is not live")
    local = s.local_features(slo_target)[agent]
    return np.concatenate([local, np.asarray(embeddings)[agent]])
