"""Named benchmark instances, each paired with a T*-closed finite class."""

from __future__ import annotations

from typing import Any

import numpy as np

from .errors import ConfigError
from .mdp import RewardNoise, TabularMdp
from .value_class import QFunctionClass, closure_class

CHAIN_DEFAULTS: dict[str, Any] = {
    "states": 5,
    "horizon": 3,
    "p_right": 0.7,
    "goal_reward": 1.0,
    "distractor_reward": 0.3,
    "goal_levels": [0.0, 0.5, 1.0],
    "distractor_levels": [0.3, 1.0],
    "reward_noise": "bernoulli",
}

RANDOM_TABULAR_DEFAULTS: dict[str, Any] = {
    "states": 3,
    "actions": 2,
    "horizon": 2,
    "candidates": 2,
    "seed": 0,
    "reward_noise": "bernoulli",
}

LINEAR_GRID_DEFAULTS: dict[str, Any] = {
    "d": 2,
    "grid": 5,
    "horizon": 2,
    "states": 3,
    "actions": 2,
    "seed": 0,
    "closure": True,
    "reward_noise": "bernoulli",
}

INSTANCE_DEFAULTS = {
    "chain": CHAIN_DEFAULTS,
    "random_tabular": RANDOM_TABULAR_DEFAULTS,
    "linear_grid": LINEAR_GRID_DEFAULTS,
}


def _merged(name: str, params: dict | None) -> dict:
    defaults = INSTANCE_DEFAULTS[name]
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(f"params.{sorted(unknown)[0]}", f"not a parameter of instance {name!r}")
    return {**defaults, **{k: v for k, v in params.items() if v is not None}}


def _positive_int(params: dict, key: str, minimum: int = 1) -> int:
    value = params[key]
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < minimum:
        raise ConfigError(f"params.{key}", f"expected an integer >= {minimum}, got {value!r}")
    return int(value)


def chain_instance(params: dict | None = None) -> tuple[TabularMdp, QFunctionClass]:
    """River-swim style chain; only the far-right state pays the large reward.

    "right" (action 1) advances with probability p_right and otherwise stays;
    "left" (action 0) moves back deterministically. The start state sits
    `horizon - 1` steps left of the goal, so the goal is reachable only by
    moving right at every step. A smaller distractor reward sits at state 0.
    Rewards are paid at the last step only, which keeps every value in [0, 1].

    The class closes, under the true Bellman operator, the last-step reward
    hypotheses goal_levels x distractor_levels (plus the truth).
    """
    p = _merged("chain", params)
    N = _positive_int(p, "states", 2)
    H = _positive_int(p, "horizon")
    p_right = float(p["p_right"])
    if not 0 < p_right <= 1:
        raise ConfigError("params.p_right", f"must lie in (0, 1], got {p_right!r}")
    for key in ("goal_reward", "distractor_reward"):
        if not 0 <= float(p[key]) <= 1:
            raise ConfigError(f"params.{key}", f"must lie in [0, 1], got {p[key]!r}")

    P = np.zeros((H, N, 2, N))
    for x in range(N):
        P[:, x, 0, max(x - 1, 0)] = 1.0
        P[:, x, 1, min(x + 1, N - 1)] += p_right
        P[:, x, 1, x] += 1.0 - p_right
    r = np.zeros((H, N, 2))
    r[H - 1, 0, :] = float(p["distractor_reward"])
    r[H - 1, N - 1, :] = float(p["goal_reward"])
    start = max(0, N - H)
    mdp = TabularMdp(P, r, start, RewardNoise.parse(p["reward_noise"]))

    candidates: list[list[np.ndarray]] = [[] for _ in range(H)]
    for g in p["goal_levels"]:
        for d in p["distractor_levels"]:
            table = np.zeros((N, 2))
            table[0, :] = d
            table[N - 1, :] = g
            candidates[H - 1].append(table)
    return mdp, closure_class(mdp, candidates, bound_b=2.0)


def random_tabular_instance(params: dict | None = None) -> tuple[TabularMdp, QFunctionClass]:
    """Dirichlet transitions and uniform mean rewards; random candidates closed under T*."""
    p = _merged("random_tabular", params)
    X = _positive_int(p, "states")
    A = _positive_int(p, "actions")
    H = _positive_int(p, "horizon")
    n_cand = _positive_int(p, "candidates", 0)
    rng = np.random.default_rng(int(p["seed"]))
    P = rng.dirichlet(np.ones(X), size=(H, X, A))
    r = rng.random((H, X, A))
    mdp = TabularMdp(P, r, 0, RewardNoise.parse(p["reward_noise"]))
    candidates = [[rng.random((X, A)) * (H - h) for _ in range(n_cand)] for h in range(H)]
    return mdp, closure_class(mdp, candidates)


def linear_grid_instance(params: dict | None = None) -> tuple[TabularMdp, QFunctionClass]:
    """Linear MDP with simplex features and a weight-grid class.

    P^h(x'|x,a) = <phi(x,a), mu_h(x')> and r^h = <phi, theta_h>, with phi in the
    simplex, each mu_h[k] a distribution and theta_h in [0, 1]^d. Step h holds
    `grid` points per axis over [0, H - h]^d, which sits inside the ball of
    radius (H - h) sqrt(d). With `closure` the exact Bellman images are added,
    so completeness holds exactly.
    """
    p = _merged("linear_grid", params)
    d = _positive_int(p, "d")
    grid = _positive_int(p, "grid")
    H = _positive_int(p, "horizon")
    X = _positive_int(p, "states")
    A = _positive_int(p, "actions")
    rng = np.random.default_rng(int(p["seed"]))
    phi = rng.dirichlet(np.ones(d), size=(X, A))  # (X, A, d)
    mu = rng.dirichlet(np.ones(X), size=(H, d))  # (H, d, X)
    theta = rng.random((H, d))
    P = np.einsum("xak,hky->hxay", phi, mu)
    P /= P.sum(axis=3, keepdims=True)
    r = np.einsum("xak,hk->hxa", phi, theta)
    mdp = TabularMdp(P, r, 0, RewardNoise.parse(p["reward_noise"]))

    weights: list[np.ndarray] = [np.zeros((0, d))] * H
    next_values: np.ndarray | None = None  # (n_{h+1}, X)
    for h in range(H - 1, -1, -1):
        axis = np.linspace(0.0, H - h, grid) if grid > 1 else np.array([float(H - h)])
        w = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        if p["closure"]:
            images = theta[h][None] + (next_values @ mu[h].T if next_values is not None else 0.0)
            w = np.concatenate([w, np.atleast_2d(images)])
        w = _unique_rows(w)
        weights[h] = w
        next_values = np.einsum("xak,nk->nxa", phi, w).max(axis=2)
    return mdp, QFunctionClass.from_features(phi, weights)


def _unique_rows(w: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    kept: list[np.ndarray] = []
    for row in w:
        if not any(np.max(np.abs(row - k)) <= atol for k in kept):
            kept.append(row)
    return np.array(kept)


_BUILDERS = {
    "chain": chain_instance,
    "random_tabular": random_tabular_instance,
    "linear_grid": linear_grid_instance,
}


def gen_instance(name: str, params: dict | None = None) -> tuple[TabularMdp, QFunctionClass]:
    if name not in _BUILDERS:
        raise ConfigError("name", f"unknown instance {name!r}; expected one of {sorted(_BUILDERS)}")
    return _BUILDERS[name](params)


def instance_document(name: str, params: dict | None = None) -> dict:
    mdp, fclass = gen_instance(name, params)
    return {
        "name": name,
        "params": _merged(name, params),
        "mdp": mdp.to_dict(),
        "class": fclass.to_dict(),
    }
