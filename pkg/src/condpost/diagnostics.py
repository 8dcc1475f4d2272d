"""Exact checks of the excess-loss identities, by enumerating (x', r) supports."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .mdp import DeterministicPolicy, TabularMdp, Trajectory, enumerate_trajectories, transition_support
from .posterior import excess_loss_delta
from .value_class import MemberIndexTuple, QFunctionClass, bellman_residual, check_tuple


def _pair(fclass: QFunctionClass, f: MemberIndexTuple, h: int) -> tuple[int, int]:
    return f[h], (f[h + 1] if h + 1 < fclass.horizon else 0)


def excess_loss_outcomes(
    mdp: TabularMdp, fclass: QFunctionClass, f: MemberIndexTuple, h: int, x: int, a: int
) -> tuple[np.ndarray, np.ndarray]:
    """Every value of the excess loss at (h, x, a) with its probability."""
    i, j = _pair(fclass, f, h)
    values, probs = [], []
    for y, r, p in transition_support(mdp, h, x, a):
        values.append(excess_loss_delta(mdp, fclass, h, i, j, (x, a, r, y)))
        probs.append(p)
    return np.array(values), np.array(probs)


@dataclass(frozen=True)
class ExcessLossMoments:
    mean: float
    second_moment: float
    residual: float  # E_h(f; x, a)


def excess_loss_moments(
    mdp: TabularMdp, fclass: QFunctionClass, f: MemberIndexTuple, h: int, x: int, a: int
) -> ExcessLossMoments:
    values, probs = excess_loss_outcomes(mdp, fclass, f, h, x, a)
    return ExcessLossMoments(
        float(probs @ values),
        float(probs @ values**2),
        bellman_residual(mdp, fclass, f, h, x, a),
    )


def log_exp_moment(
    mdp: TabularMdp,
    fclass: QFunctionClass,
    f: MemberIndexTuple,
    h: int,
    x: int,
    a: int,
    eta: float,
) -> float:
    """ln E exp(-eta * excess loss) over the exact (x', r) law at (h, x, a)."""
    values, probs = excess_loss_outcomes(mdp, fclass, f, h, x, a)
    return float(logsumexp(-eta * values, b=probs))


PolicyRule = Callable[[Sequence[Trajectory]], DeterministicPolicy]


def martingale_expectation(
    mdp: TabularMdp,
    fclass: QFunctionClass,
    f: MemberIndexTuple,
    h: int,
    eta: float,
    num_episodes: int,
    policy_rule: PolicyRule,
) -> float:
    """E exp(sum_s xi_s) over every history of `num_episodes` episodes.

    xi_s = -2 eta dL_s - ln E[exp(-2 eta dL) | x_s^h, a_s^h], with dL the excess
    loss of f at step h on episode s. The policy of each episode may depend on
    the history so far through `policy_rule`.
    """
    check_tuple(fclass, f)
    i, j = _pair(fclass, f, h)
    log_norm: dict[tuple[int, int], float] = {}

    def xi(traj: Trajectory) -> float:
        x, a = int(traj.states[h]), int(traj.actions[h])
        r, y = float(traj.rewards[h]), int(traj.states[h + 1])
        key = (x, a)
        if key not in log_norm:
            log_norm[key] = log_exp_moment(mdp, fclass, f, h, x, a, 2 * eta)
        return -2 * eta * excess_loss_delta(mdp, fclass, h, i, j, (x, a, r, y)) - log_norm[key]

    def recurse(history: list[Trajectory], log_acc: float) -> float:
        if len(history) == num_episodes:
            return float(np.exp(log_acc))
        policy = policy_rule(history)
        total = 0.0
        for traj, prob in enumerate_trajectories(mdp, policy):
            history.append(traj)
            total += prob * recurse(history, log_acc + xi(traj))
            history.pop()
        return total

    return recurse([], 0.0)
