"""Seed splitting.

Every random stream in a run is derived from one master seed through
``numpy.random.SeedSequence`` spawn keys, so the order in which streams are
consumed (or run in parallel) never changes their contents::

    stream(seed, TOPOLOGY)                    graph generation, capacity calibration
    stream(seed, AGENT_SELECT)                which services get an agent
    stream(seed, PORTFOLIO, role)             initial strategy parameters of a role
    stream(seed, EMBEDDING)                   GCN weight init
    stream(seed, TRAINING)                    batch sampling / target actions
    stream(seed, GENERATION, g, episode)      fitness episodes of generation g
    stream(seed, EVOLUTION, g)                refresh noise of generation g
    stream(seed, EVALUATION, episode)         final evaluation episodes
"""

from __future__ import annotations

import numpy as np

TOPOLOGY = 1
AGENT_SELECT = 2
PORTFOLIO = 3
EMBEDDING = 4
TRAINING = 5
GENERATION = 6
EVOLUTION = 7
EVALUATION = 8


def seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *key)))


def generator_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def copy_generator(rng: np.random.Generator) -> np.random.Generator:
    return generator_from_state(rng.bit_generator.state)
