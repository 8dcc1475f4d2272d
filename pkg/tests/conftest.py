from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from condpost.mdp import RewardNoise, TabularMdp
from condpost.value_class import QFunctionClass


def random_mdp(seed: int, X: int = 3, A: int = 2, H: int = 2, noise: str = "bernoulli",
               sparse: bool = False) -> TabularMdp:
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(X), size=(H, X, A))
    if sparse:
        # zero out some next states so supports differ between rows
        mask = rng.random(P.shape) < 0.4
        mask[..., 0] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=3, keepdims=True)
    r = rng.random((H, X, A))
    return TabularMdp(P, r, int(rng.integers(X)), RewardNoise(noise))


def random_class(seed: int, mdp: TabularMdp, sizes, scale: float = 1.0,
                 random_prior: bool = True) -> QFunctionClass:
    rng = np.random.default_rng(seed)
    X, A = mdp.num_states, mdp.num_actions
    members = [rng.random((n, X, A)) * scale for n in sizes]
    if random_prior:
        priors = [rng.dirichlet(np.ones(n)) for n in sizes]
    else:
        priors = None
    return QFunctionClass.from_tables(members, priors)


def deterministic_chain(X: int, H: int, rewards=None) -> TabularMdp:
    """Action 1 moves right (capped), action 0 stays; deterministic rewards."""
    P = np.zeros((H, X, 2, X))
    for x in range(X):
        P[:, x, 0, x] = 1.0
        P[:, x, 1, min(x + 1, X - 1)] = 1.0
    r = np.zeros((H, X, 2)) if rewards is None else np.asarray(rewards, dtype=float)
    return TabularMdp(P, r, 0, RewardNoise.DETERMINISTIC)


@st.composite
def small_mdps(draw, max_states: int = 3, max_actions: int = 2, max_horizon: int = 3):
    X = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    H = draw(st.integers(1, max_horizon))
    seed = draw(st.integers(0, 2**32 - 1))
    noise = draw(st.sampled_from(["deterministic", "bernoulli"]))
    sparse = draw(st.booleans())
    return random_mdp(seed, X, A, H, noise, sparse)


@pytest.fixture
def two_state_mdp() -> TabularMdp:
    P = np.array([
        [[[0.7, 0.3], [0.2, 0.8]], [[0.5, 0.5], [0.9, 0.1]]],
        [[[1.0, 0.0], [0.4, 0.6]], [[0.3, 0.7], [0.0, 1.0]]],
    ])
    r = np.array([[[0.1, 0.6], [0.3, 0.2]], [[0.5, 0.0], [0.8, 0.4]]])
    return TabularMdp(P, r, 0, RewardNoise.BERNOULLI)
