"""Finite episodic MDPs: representation, simulation and exact dynamic programming.

Steps are 0-based throughout the package: an episode visits h = 0, ..., H-1 and
values at step H are identically zero. Arrays are laid out as

    transitions   (H, X, A, X)   P^h(x' | x, a)
    mean_rewards  (H, X, A)      r^h(x, a) in [0, 1]
    policy        (H, X)         action index
    Q tables      (H, X, A)
    V tables      (H + 1, X)     with V[H] = 0
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from .errors import InvalidMdp

_SUM_TOL = 1e-12


class RewardNoise(str, Enum):
    DETERMINISTIC = "deterministic"
    BERNOULLI = "bernoulli"

    @classmethod
    def parse(cls, value: str | RewardNoise) -> RewardNoise:
        if isinstance(value, RewardNoise):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise InvalidMdp(
                f"reward_noise: expected 'deterministic' or 'bernoulli', got {value!r}"
            ) from None


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transitions: np.ndarray
    mean_rewards: np.ndarray
    initial_state: int = 0
    reward_noise: RewardNoise = RewardNoise.DETERMINISTIC

    def __post_init__(self):
        P = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.mean_rewards, dtype=float)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise InvalidMdp(f"transitions: expected shape (H, X, A, X), got {P.shape}")
        H, X, A, _ = P.shape
        if min(H, X, A) < 1:
            raise InvalidMdp(f"transitions: empty dimension in shape {P.shape}")
        if r.shape != (H, X, A):
            raise InvalidMdp(f"mean_rewards: expected shape {(H, X, A)}, got {r.shape}")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            h, x, a, _ = np.argwhere(~(P >= 0))[0]
            raise InvalidMdp(f"transitions[{h}][{x}][{a}]: negative or non-finite entry")
        sums = P.sum(axis=3)
        bad = np.argwhere(np.abs(sums - 1.0) > _SUM_TOL)
        if len(bad):
            h, x, a = bad[0]
            raise InvalidMdp(
                f"transitions[{h}][{x}][{a}]: row sums to {float(sums[h, x, a])!r}, expected 1 "
                f"(h={h}, x={x}, a={a})"
            )
        bad = np.argwhere(~((r >= 0) & (r <= 1)))
        if len(bad):
            h, x, a = bad[0]
            raise InvalidMdp(
                f"mean_rewards[{h}][{x}][{a}]: {float(r[h, x, a])!r} outside [0, 1]"
            )
        x1 = int(self.initial_state)
        if x1 != self.initial_state or not 0 <= x1 < X:
            raise InvalidMdp(f"initial_state: {self.initial_state!r} not a state index in [0, {X})")
        object.__setattr__(self, "transitions", _readonly(P))
        object.__setattr__(self, "mean_rewards", _readonly(r))
        object.__setattr__(self, "initial_state", x1)
        object.__setattr__(self, "reward_noise", RewardNoise.parse(self.reward_noise))

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[2]

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "initial_state": self.initial_state,
            "reward_noise": self.reward_noise.value,
            "transitions": self.transitions.tolist(),
            "mean_rewards": self.mean_rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TabularMdp:
        for key in ("transitions", "mean_rewards"):
            if key not in doc:
                raise InvalidMdp(f"{key}: missing")
        try:
            P = np.asarray(doc["transitions"], dtype=float)
            r = np.asarray(doc["mean_rewards"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidMdp(f"transitions/mean_rewards: not a dense numeric array ({exc})") from None
        declared = {k: doc[k] for k in ("horizon", "num_states", "num_actions") if k in doc}
        actual = dict(zip(("horizon", "num_states", "num_actions"), P.shape[:3]))
        for key, value in declared.items():
            if P.ndim == 4 and value != actual[key]:
                raise InvalidMdp(f"{key}: declared {value} but transitions imply {actual[key]}")
        return cls(
            transitions=P,
            mean_rewards=r,
            initial_state=doc.get("initial_state", 0),
            reward_noise=doc.get("reward_noise", RewardNoise.DETERMINISTIC),
        )


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    actions: np.ndarray  # (H, X) ints

    def __post_init__(self):
        acts = np.array(self.actions, dtype=np.int64, copy=True)
        if acts.ndim != 2:
            raise ValueError(f"policy table must be (H, X), got shape {acts.shape}")
        acts.setflags(write=False)
        object.__setattr__(self, "actions", acts)

    def __call__(self, h: int, x: int) -> int:
        return int(self.actions[h, x])

    def check(self, mdp: TabularMdp) -> None:
        if self.actions.shape != (mdp.horizon, mdp.num_states):
            raise ValueError(
                f"policy shape {self.actions.shape} does not match (H, X) = "
                f"{(mdp.horizon, mdp.num_states)}"
            )
        if self.actions.min() < 0 or self.actions.max() >= mdp.num_actions:
            raise ValueError("policy selects an action index out of range")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One episode: states has length H + 1 (the last entry is x^{H+1})."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def terminal_state(self) -> int:
        return int(self.states[-1])

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        return [
            (int(x), int(a), float(r))
            for x, a, r in zip(self.states[:-1], self.actions, self.rewards)
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


def categorical_index(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def simulate_episode(mdp: TabularMdp, policy: DeterministicPolicy, rng_seed: int) -> Trajectory:
    """Roll out `policy` from the initial state.

    Per step, one uniform draw decides a Bernoulli reward and a second one picks
    the next state by inverse CDF, so the trajectory is a pure function of
    (mdp, policy, rng_seed).
    """
    rng = np.random.default_rng(rng_seed)
    H = mdp.horizon
    states = np.empty(H + 1, dtype=np.int64)
    actions = np.empty(H, dtype=np.int64)
    rewards = np.empty(H, dtype=float)
    x = mdp.initial_state
    bernoulli = mdp.reward_noise is RewardNoise.BERNOULLI
    for h in range(H):
        a = int(policy.actions[h, x])
        mean = mdp.mean_rewards[h, x, a]
        u_reward, u_next = rng.random(2)
        rewards[h] = float(u_reward < mean) if bernoulli else mean
        states[h] = x
        actions[h] = a
        x = categorical_index(mdp.transitions[h, x, a], u_next)
    states[H] = x
    return Trajectory(states, actions, rewards)


def bellman_apply(mdp: TabularMdp, h: int, f_next: np.ndarray | None) -> np.ndarray:
    """[T*_h f](x, a) = r^h(x, a) + E_{x'} max_a' f(x', a'); `None` is the zero function."""
    if f_next is None:
        return np.array(mdp.mean_rewards[h])
    return mdp.mean_rewards[h] + mdp.transitions[h] @ np.max(f_next, axis=1)


def optimal_values(mdp: TabularMdp) -> tuple[np.ndarray, np.ndarray]:
    """Backward induction. Returns (Q*, V*) with shapes (H, X, A) and (H + 1, X)."""
    H, X, A = mdp.horizon, mdp.num_states, mdp.num_actions
    Q = np.zeros((H, X, A))
    V = np.zeros((H + 1, X))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.mean_rewards[h] + mdp.transitions[h] @ V[h + 1]
        V[h] = Q[h].max(axis=1)
    return Q, V


def optimal_policy(mdp: TabularMdp) -> DeterministicPolicy:
    Q, _ = optimal_values(mdp)
    return DeterministicPolicy(np.argmax(Q, axis=2))


def policy_values(mdp: TabularMdp, policy: DeterministicPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Exact (Q^pi, V^pi) by backward induction."""
    H, X = mdp.horizon, mdp.num_states
    Q = np.zeros((H, X, mdp.num_actions))
    V = np.zeros((H + 1, X))
    rows = np.arange(X)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.mean_rewards[h] + mdp.transitions[h] @ V[h + 1]
        V[h] = Q[h][rows, policy.actions[h]]
    return Q, V


def policy_value(mdp: TabularMdp, policy: DeterministicPolicy) -> float:
    _, V = policy_values(mdp, policy)
    return float(V[0, mdp.initial_state])


def occupancy_measures(mdp: TabularMdp, policy: DeterministicPolicy) -> np.ndarray:
    """Per-step state-action distributions d^h(x, a) under `policy`, shape (H, X, A)."""
    H, X, A = mdp.horizon, mdp.num_states, mdp.num_actions
    occ = np.zeros((H, X, A))
    dist = np.zeros(X)
    dist[mdp.initial_state] = 1.0
    rows = np.arange(X)
    for h in range(H):
        occ[h, rows, policy.actions[h]] = dist
        dist = np.einsum("xa,xay->y", occ[h], mdp.transitions[h])
    return occ


def transition_support(mdp: TabularMdp, h: int, x: int, a: int) -> list[tuple[int, float, float]]:
    """Exact joint law of (x', r) given (h, x, a) as (next_state, reward, probability) triples.

    Next state and reward are drawn independently; zero-probability outcomes are dropped.
    """
    mean = float(mdp.mean_rewards[h, x, a])
    if mdp.reward_noise is RewardNoise.BERNOULLI:
        rewards = [(0.0, 1.0 - mean), (1.0, mean)]
    else:
        rewards = [(mean, 1.0)]
    out = []
    for y in range(mdp.num_states):
        p = float(mdp.transitions[h, x, a, y])
        for r, q in rewards:
            if p > 0 and q > 0:
                out.append((y, r, p * q))
    return out


def enumerate_trajectories(
    mdp: TabularMdp, policy: DeterministicPolicy
) -> Iterator[tuple[Trajectory, float]]:
    """Every trajectory with positive probability under `policy`, with its probability."""
    H = mdp.horizon

    def extend(h, x, states, actions, rewards, prob):
        if h == H:
            yield Trajectory(
                np.array(states + [x]), np.array(actions), np.array(rewards, dtype=float)
            ), prob
            return
        a = int(policy.actions[h, x])
        for y, r, q in transition_support(mdp, h, x, a):
            yield from extend(h + 1, y, states + [x], actions + [a], rewards + [r], prob * q)

    yield from extend(0, mdp.initial_state, [], [], [], 1.0)


def all_policies(mdp: TabularMdp) -> Iterator[DeterministicPolicy]:
    """Every deterministic Markov policy; |A|^(H*X) of them, so only for tiny MDPs."""
    H, X, A = mdp.horizon, mdp.num_states, mdp.num_actions
    for flat in itertools.product(range(A), repeat=H * X):
        yield DeterministicPolicy(np.array(flat).reshape(H, X))
