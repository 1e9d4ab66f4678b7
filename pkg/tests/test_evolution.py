import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from swarm_gov.agents import PolicyParameters
from swarm_gov.evolution import (
    EvolutionConfig,
    EvolutionError,
    StrategyPopulation,
    advance_shares,
    apply_floor,
    estimate_fitness,
    evolve_generation,
    mean_fitness,
    monte_carlo,
    mutate,
    replicator_step,
    sample_strategies,
    step_at,
)


@st.composite
def simplex(draw, min_size=2, max_size=8):
    n = draw(st.integers(min_size, max_size))
    w = draw(arrays(float, n, elements=st.floats(0.0, 1.0)))
    assume(w.sum() > 1e-3)
    return w / w.sum()


def fitness_for(x):
    return arrays(float, x.size, elements=st.floats(-10, 10))


def _pop(n, seed=0):
    rng = np.random.default_rng(seed)
    return StrategyPopulation.uniform([PolicyParameters.random(3, rng) for _ in range(n)])


def test_mean_fitness_examples():
    assert mean_fitness([0.25, 0.75], [4.0, 0.0]) == 1.0
    assert mean_fitness([0.5, 0.5], [3.0, 7.0]) == 5.0
    assert mean_fitness([0.1, 0.2, 0.7], [2.5] * 3) == pytest.approx(2.5, abs=1e-15)
    with pytest.raises(EvolutionError):
        mean_fitness([1.0], [1.0, 2.0])


def test_replicator_examples():
    x = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(replicator_step(x, np.full(3, 4.0), 0.3), x)
    np.testing.assert_allclose(replicator_step([0.5, 0.5], [1.0, 0.0], 0.1), [0.525, 0.475], atol=1e-15)
    np.testing.assert_array_equal(replicator_step([1.0, 0.0], [0.0, 9.0], 0.5), [1.0, 0.0])
    with pytest.raises(EvolutionError):
        replicator_step([0.6, 0.6], [0.0, 1.0], 0.1)
    with pytest.raises(EvolutionError):
        replicator_step([0.5, 0.5], [np.nan, 1.0], 0.1)


def test_mutate_examples():
    x = np.array([0.7, 0.2, 0.1])
    np.testing.assert_array_equal(mutate(x, 0.0), x)
    np.testing.assert_allclose(mutate(x, 1.0), np.full(3, 1 / 3), atol=1e-15)
    np.testing.assert_allclose(mutate([1.0, 0.0], 0.1, 2), [0.95, 0.05], atol=1e-15)
    for bad in (-0.1, 1.1):
        with pytest.raises(EvolutionError):
            mutate(x, bad)


@given(x=simplex(), data=st.data(), eta=st.floats(0.0, 5.0), mu=st.floats(0.0, 1.0),
       floor=st.floats(0.0, 0.1))
def test_share_operations_stay_on_simplex(x, data, eta, mu, floor):
    f = data.draw(fitness_for(x))
    for y in (replicator_step(x, f, eta), mutate(x, mu), apply_floor(x, floor)):
        assert np.all(y >= 0)
        assert abs(y.sum() - 1.0) <= 1e-9


@given(x=simplex(), data=st.data(), c=st.integers(-1000, 1000), eta=st.sampled_from([0.01, 0.05, 0.5]))
def test_constant_shift_is_exact(x, data, c, eta):
    # fitness on a dyadic grid so the shifted values are exactly representable
    k = data.draw(arrays(np.int64, x.size, elements=st.integers(-4096, 4096)))
    f = k / 256.0
    assert np.array_equal(replicator_step(x, f, eta), replicator_step(x, f + c, eta))


@given(x=simplex(), data=st.data(), c=st.floats(-100, 100))
def test_constant_shift_on_arbitrary_floats(x, data, c):
    f = data.draw(fitness_for(x))
    np.testing.assert_allclose(replicator_step(x, f, 0.05), replicator_step(x, f + c, 0.05), rtol=0, atol=1e-12)


@given(x=simplex(), data=st.data())
def test_selection_is_monotone(x, data):
    f = data.draw(fitness_for(x))
    eta = 0.01
    fbar = x @ f
    y = replicator_step(x, f, eta, adaptive=False)
    pre = x + eta * x * (f - fbar)
    assume(np.all(pre >= 0))
    for i in range(x.size):
        if x[i] > 1e-6 and abs(f[i] - fbar) > 1e-6:
            assert (y[i] > x[i]) == (f[i] > fbar)


@given(x=simplex(), mu=st.floats(0.001, 1.0))
def test_mutation_prevents_extinction(x, mu):
    y = mutate(x, mu)
    assert np.all(y >= mu / x.size * (1 - 1e-12))


def test_dominance_game_converges():
    payoff = np.array([[3.0, 1.0], [2.0, 0.0]])  # row 0 strictly dominates
    x = np.array([0.01, 0.99])
    for k in range(10_000):
        x = replicator_step(x, payoff @ x, 0.01)
        if x[0] >= 1 - 1e-3:
            break
    assert x[0] >= 1 - 1e-3


def test_adaptive_halving_keeps_shares_nonnegative():
    y = replicator_step([0.5, 0.5], [100.0, 0.0], 1.0)
    assert np.all(y >= 0) and y[1] > 0


def test_step_decay():
    assert step_at(EvolutionConfig(step_size=0.5), 40) == 0.5
    cfg = EvolutionConfig(step_size=0.5, step_decay=10.0)
    assert step_at(cfg, 0) == 0.5
    assert step_at(cfg, 10) == pytest.approx(0.25)
    with pytest.raises(EvolutionError):
        EvolutionConfig(step_decay=-1.0)


def test_sample_strategies_inverse_cdf():
    x = np.array([0.2, 0.0, 0.8])
    u = np.array([0.0, 0.19, 0.2, 0.99999])
    assert sample_strategies(x, u).tolist() == [0, 0, 2, 2]


# ---------------------------------------------------------------- fitness


def bandit(means, noise=0.1):
    def env(pop, i, rng):
        return means[i] + noise * rng.standard_normal()

    return env


def test_single_strategy_fitness():
    f = estimate_fitness(_pop(1), bandit([2.0]), 3, np.random.default_rng(0))
    assert f.shape == (1,)


def test_identical_strategies_agree_within_noise():
    pop = _pop(2)
    pop.portfolio[1] = pop.portfolio[0].copy()

    def env(pop, i, rng):
        # the return depends on the strategy only through its parameters
        shift = float(pop.portfolio[i].bias.sum())
        return shift + rng.standard_normal()

    mean, std, samples = monte_carlo(2, 40, np.random.default_rng(3), lambda i, r: env(pop, i, r))
    pooled = np.sqrt((std**2).mean() / 40 * 2)
    assert abs(mean[0] - mean[1]) <= 3 * pooled + 1e-12


def test_fitness_is_deterministic():
    pop = _pop(3)
    env = bandit([0.0, 1.0, 2.0])
    a = estimate_fitness(pop, env, 4, np.random.default_rng(9))
    b = estimate_fitness(pop, env, 4, np.random.default_rng(9))
    assert np.array_equal(a, b)
    with pytest.raises(EvolutionError):
        estimate_fitness(pop, env, 0, np.random.default_rng(9))


def test_common_random_numbers_cancel_shared_noise():
    env = bandit([0.0, 0.5], noise=5.0)
    mean, _, samples = monte_carlo(2, 10, np.random.default_rng(0), lambda i, r: env(None, i, r))
    np.testing.assert_allclose(samples[:, 1] - samples[:, 0], 0.5, atol=1e-12)


# ---------------------------------------------------------------- generations


def test_zero_step_and_mutation_keep_shares():
    pop = _pop(3)
    pop.shares = np.array([0.5, 0.3, 0.2])
    cfg = EvolutionConfig(step_size=0.0, mutation_rate=0.0, extinction_floor=0.0)
    new = evolve_generation(pop, bandit([1.0, 2.0, 3.0]), cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(new.shares, pop.shares)
    assert not np.array_equal(new.fitness, pop.fitness)


def test_dominant_strategy_takes_over():
    pop = _pop(2)
    cfg = EvolutionConfig(step_size=0.5, mutation_rate=0.001, extinction_floor=0.005)
    rng = np.random.default_rng(1)
    for _ in range(200):
        pop = evolve_generation(pop, bandit([0.0, 1.0]), cfg, rng)
    assert pop.shares[1] >= 0.99 - cfg.extinction_floor


def test_evolve_generation_is_deterministic():
    cfg = EvolutionConfig(step_size=0.5)
    a = evolve_generation(_pop(4), bandit([0, 1, 2, 3]), cfg, np.random.default_rng(2))
    b = evolve_generation(_pop(4), bandit([0, 1, 2, 3]), cfg, np.random.default_rng(2))
    assert np.array_equal(a.shares, b.shares) and np.array_equal(a.fitness, b.fitness)


def test_floored_strategies_are_refreshed_from_the_best():
    pop = _pop(3)
    cfg = EvolutionConfig(step_size=5.0, mutation_rate=0.0, extinction_floor=0.01,
                          refresh_patience=2, refresh_noise=0.0)
    rng = np.random.default_rng(0)
    pop = advance_shares(pop, np.array([0.0, 0.0, 10.0]), cfg, rng)
    for _ in range(30):
        pop = advance_shares(pop, np.array([-10.0, -10.0, 10.0]), cfg, rng)
        if pop.portfolio[0] == pop.portfolio[2]:
            break
    assert pop.portfolio[0] == pop.portfolio[2]
    assert pop.counts[0] == 0


def test_frozen_shares_never_move():
    pop = _pop(3)
    new = advance_shares(pop, np.array([1.0, 5.0, -3.0]), EvolutionConfig(frozen=True), np.random.default_rng(0))
    np.testing.assert_array_equal(new.shares, pop.shares)
    np.testing.assert_array_equal(new.fitness, [1.0, 5.0, -3.0])


def test_population_validation():
    with pytest.raises(EvolutionError):
        StrategyPopulation([], np.array([]))
    with pytest.raises(EvolutionError):
        StrategyPopulation(_pop(2).portfolio, np.array([0.7, 0.7]))
    with pytest.raises(EvolutionError):
        EvolutionConfig(mutation_rate=2.0)
