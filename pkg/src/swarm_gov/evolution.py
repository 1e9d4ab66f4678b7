"""Strategy populations under discrete replicator dynamics with mutation.

Shares evolve by forward Euler on ``dx_i/dt = x_i (f_i - fbar)``, are mixed
towards uniform by mutation, floored, and strategies that sit on the floor for
``refresh_patience`` generations are replaced by a perturbed copy of the
current best strategy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .agents import PolicyParameters

SIMPLEX_TOL = 1e-6
FITNESS_TARGETS = ("individual", "welfare")


class EvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class EvolutionConfig:
    step_size: float = 0.05
    mutation_rate: float = 0.02
    eval_episodes_per_strategy: int = 1
    extinction_floor: float = 0.005
    portfolio_size: int = 8
    refresh_patience: int = 5
    refresh_noise: float = 0.1
    focal_fraction: float = 0.25
    generations: int = 60
    frozen: bool = False  # shares never move (the no_evolution ablation)
    # harmonic decay of the replicator step, step_size / (1 + g / step_decay)
    # at generation g; 0 keeps the step constant
    step_decay: float = 0.0
    # subtract the same-role non-focal agents' return from the same episode
    # (a control variate sharing the focal agents' context); the replicator
    # ignores shifts common to all strategies
    fitness_control: bool = False
    # "individual": the focal agents' own return; "welfare": the mean return
    # of every acting agent in the episode (system-level payoff)
    fitness_target: str = "individual"

    def __post_init__(self):
        if self.step_size < 0:
            raise EvolutionError("step_size must be >= 0")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise EvolutionError("mutation_rate must lie in [0, 1]")
        if self.eval_episodes_per_strategy < 1:
            raise EvolutionError("eval_episodes_per_strategy must be >= 1")
        if self.step_decay < 0:
            raise EvolutionError("step_decay must be >= 0")
        if self.extinction_floor < 0:
            raise EvolutionError("extinction_floor must be >= 0")
        if self.fitness_target not in FITNESS_TARGETS:
            raise EvolutionError(f"fitness_target must be one of {FITNESS_TARGETS}, got {self.fitness_target!r}")


@dataclass
class StrategyPopulation:
    portfolio: list
    shares: np.ndarray
    fitness: np.ndarray = None
    counts: np.ndarray = None
    floor_streak: np.ndarray = None

    def __post_init__(self):
        n = len(self.portfolio)
        if n == 0:
            raise EvolutionError("portfolio must be non-empty")
        self.shares = np.asarray(self.shares, dtype=float)
        check_simplex(self.shares)
        if self.shares.shape != (n,):
            raise EvolutionError("shares must have one entry per strategy")
        if self.fitness is None:
            self.fitness = np.zeros(n)
        if self.counts is None:
            self.counts = np.zeros(n, dtype=int)
        if self.floor_streak is None:
            self.floor_streak = np.zeros(n, dtype=int)

    @classmethod
    def uniform(cls, portfolio: Sequence[PolicyParameters]) -> "StrategyPopulation":
        n = len(portfolio)
        return cls(list(portfolio), np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return len(self.portfolio)

    def copy(self) -> "StrategyPopulation":
        return StrategyPopulation([p.copy() for p in self.portfolio], self.shares.copy(),
                                  self.fitness.copy(), self.counts.copy(), self.floor_streak.copy())


def check_simplex(x: np.ndarray, tol: float = SIMPLEX_TOL):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0 or np.any(x < -tol) or abs(x.sum() - 1.0) > tol:
        raise EvolutionError(f"shares are off the simplex: {x}")


def _renormalize(x: np.ndarray) -> np.ndarray:
    x = np.maximum(x, 0.0)
    return x / x.sum()


def mean_fitness(x: np.ndarray, f: np.ndarray) -> float:
    x, f = np.asarray(x, dtype=float), np.asarray(f, dtype=float)
    if x.shape != f.shape:
        raise EvolutionError(f"length mismatch: {x.shape} vs {f.shape}")
    return float(x @ f)


def replicator_step(x: np.ndarray, f: np.ndarray, eta: float, adaptive: bool = True) -> np.ndarray:
    """One forward-Euler replicator step, clamped at zero and renormalised.

    With ``adaptive`` the step is halved until no pre-clamp share is below
    -1e-12 (so the clamp only removes rounding error).
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    check_simplex(x)
    if eta < 0:
        raise EvolutionError("eta must be >= 0")
    if not np.all(np.isfinite(f)):
        raise EvolutionError("fitness must be finite")
    # sum_j x_j (f_i - f_j) equals f_i - fbar on the simplex; written through
    # pairwise differences, a constant shift of f cancels before any rounding
    # that involves x, so shifted inputs give bit-identical steps whenever
    # the shifted values themselves are exact
    growth = x * ((f[:, None] - f[None, :]) @ x)
    step = eta
    new = x + step * growth
    while adaptive and np.any(new < -1e-12):
        step /= 2.0
        new = x + step * growth
    return _renormalize(new)


def mutate(x: np.ndarray, mu: float, n: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not 0.0 <= mu <= 1.0:
        raise EvolutionError(f"mutation rate must lie in [0, 1], got {mu}")
    n = x.size if n is None else n
    if n != x.size:
        raise EvolutionError("n must equal the number of strategies")
    check_simplex(x)
    if mu == 0.0:
        return x.copy()
    out = (1.0 - mu) * x + mu / n
    return out / out.sum()


def apply_floor(x: np.ndarray, floor: float) -> np.ndarray:
    if floor <= 0:
        return x
    return _renormalize(np.maximum(x, floor))


class FitnessEnv(Protocol):
    def __call__(self, pop: StrategyPopulation, strategy: int, rng: np.random.Generator) -> float:
        """Discounted return of a focal agent using ``strategy`` against opponents drawn from the shares."""


def monte_carlo(n: int, episodes: int, rng: np.random.Generator,
                run: Callable[[int, np.random.Generator], np.ndarray]):
    """Mean and std of ``run(i, episode_rng)`` over episodes, for every strategy i.

    Each episode draws one generator state; all strategies replay that same
    state (common random numbers), so differences between strategies are not
    masked by episode-to-episode noise.
    """
    if episodes < 1:
        raise EvolutionError("episodes must be >= 1")
    samples = []
    for _ in range(episodes):
        ep_seed = int(rng.integers(2**63 - 1))
        row = []
        for i in range(n):
            row.append(np.asarray(run(i, np.random.default_rng(ep_seed)), dtype=float))
        samples.append(row)
    arr = np.array(samples)  # (episodes, n, ...)
    return arr.mean(axis=0), arr.std(axis=0), arr


def estimate_fitness(pop: StrategyPopulation, env: FitnessEnv, episodes: int,
                     rng: np.random.Generator) -> np.ndarray:
    mean, _, _ = monte_carlo(pop.size, episodes, rng, lambda i, r: env(pop, i, r))
    return mean


def step_at(cfg: EvolutionConfig, generation: int) -> float:
    if cfg.step_decay <= 0:
        return cfg.step_size
    return cfg.step_size / (1.0 + generation / cfg.step_decay)


def advance_shares(pop: StrategyPopulation, f: np.ndarray, cfg: EvolutionConfig,
                   rng: np.random.Generator, episodes: int = 1, generation: int = 0) -> StrategyPopulation:
    """Selection, mutation, floor and refresh given a fresh fitness vector."""
    new = pop.copy()
    new.fitness = np.asarray(f, dtype=float).copy()
    new.counts = pop.counts + episodes
    if cfg.frozen:
        return new
    x = pop.shares
    eta = step_at(cfg, generation)
    if eta > 0:
        x = replicator_step(x, new.fitness, eta)
    x = mutate(x, cfg.mutation_rate)
    x = apply_floor(x, cfg.extinction_floor)
    new.shares = x

    at_floor = x <= cfg.extinction_floor * (1.0 + 1e-9) if cfg.extinction_floor > 0 else np.zeros(x.size, bool)
    new.floor_streak = np.where(at_floor, pop.floor_streak + 1, 0)
    best = int(np.argmax(new.fitness))
    for i in np.flatnonzero(new.floor_streak >= cfg.refresh_patience):
        if i == best:
            continue
        parent = new.portfolio[best]
        new.portfolio[i] = PolicyParameters(
            parent.weights + cfg.refresh_noise * rng.standard_normal(parent.weights.shape),
            parent.bias + cfg.refresh_noise * rng.standard_normal(parent.bias.shape),
        )
        new.fitness[i] = new.fitness[best]
        new.counts[i] = 0
        new.floor_streak[i] = 0
    return new


def evolve_generation(pop: StrategyPopulation, env: FitnessEnv, cfg: EvolutionConfig,
                      rng: np.random.Generator) -> StrategyPopulation:
    f = estimate_fitness(pop, env, cfg.eval_episodes_per_strategy, rng)
    return advance_shares(pop, f, cfg, rng, cfg.eval_episodes_per_strategy)


def sample_strategies(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Strategy index for each uniform draw in ``u`` (inverse CDF of the shares)."""
    cdf = np.cumsum(x)
    return np.minimum(np.searchsorted(cdf, np.asarray(u) * cdf[-1], side="right"), len(x) - 1)
