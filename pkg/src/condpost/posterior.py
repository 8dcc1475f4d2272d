"""Conditional posterior over member tuples, sampled exactly by message passing.

The posterior factorizes along the steps:

    log p(f | S) = lam * f^1(x^1) + sum_h psi_h(f^h, f^{h+1}) + const,
    psi_h(i, j)  = ln p0^h(i) - alpha * eta * C^h[i, j]
                   - alpha * ln sum_i' p0^h(i') exp(-eta * C^h[i', j]),

where C^h holds cumulative squared TD errors. alpha = 1 is the plain
conditional posterior; alpha < 1 is the tempered variant. Replacing the excess
loss by the raw TD loss is exact here: the subtracted term depends only on
f^{h+1} and cancels between the loss and the per-j normalizer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import CapExceeded
from .mdp import TabularMdp, Trajectory, bellman_apply
from .value_class import MemberIndexTuple, QFunctionClass, iter_tuples

DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True, eq=False)
class PosteriorState:
    episode_count: int
    losses: tuple[np.ndarray, ...]  # C^h, shape (n_h, n_{h+1}); n_{H+1} = 1
    eta: float
    lam: float
    alpha: float
    initial_state: int

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha!r}")

    @classmethod
    def initial(
        cls,
        fclass: QFunctionClass,
        eta: float,
        lam: float,
        alpha: float = 1.0,
        initial_state: int = 0,
    ) -> PosteriorState:
        losses = tuple(np.zeros((n, m)) for n, m in zip(fclass.sizes, fclass.next_sizes()))
        return cls(0, losses, float(eta), float(lam), float(alpha), int(initial_state))


def td_loss_increments(fclass: QFunctionClass, trajectory: Trajectory) -> tuple[np.ndarray, ...]:
    """(f_i^h(x^h, a^h) - r^h - f_j^{h+1}(x^{h+1}))^2 for every h and pair (i, j)."""
    if trajectory.horizon != fclass.horizon:
        raise ValueError(
            f"trajectory has {trajectory.horizon} steps, class has {fclass.horizon}"
        )
    out = []
    states = trajectory.states
    for h in range(fclass.horizon):
        x, a, r = int(states[h]), int(trajectory.actions[h]), float(trajectory.rewards[h])
        pred = fclass.members[h][:, x, a]
        if h + 1 < fclass.horizon:
            nxt = fclass.state_values[h + 1][:, int(states[h + 1])]
        else:
            nxt = np.zeros(1)
        out.append((pred[:, None] - r - nxt[None, :]) ** 2)
    return tuple(out)


def update_losses(
    state: PosteriorState, fclass: QFunctionClass, trajectory: Trajectory
) -> PosteriorState:
    inc = td_loss_increments(fclass, trajectory)
    losses = tuple(c + d for c, d in zip(state.losses, inc))
    return replace(state, episode_count=state.episode_count + 1, losses=losses)


@dataclass(frozen=True, eq=False)
class LogWeightChain:
    """Chain-structured log-potentials; a tuple's log weight is
    unary[i_1] + sum_h pairwise[h][i_h, i_{h+1}] with i_{H+1} = 0."""

    unary: np.ndarray
    pairwise: tuple[np.ndarray, ...]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(p.shape[0] for p in self.pairwise)

    @cached_property
    def messages(self) -> tuple[np.ndarray, ...]:
        """beta_h(i) = ln sum over continuations from i_h = i; beta_{H+1} = [0]."""
        out = [np.zeros(1)]
        for psi in reversed(self.pairwise):
            out.append(logsumexp(psi + out[-1][None, :], axis=1))
        return tuple(reversed(out))

    @cached_property
    def log_normalizer(self) -> float:
        return float(logsumexp(self.unary + self.messages[0]))

    def log_weight(self, f: MemberIndexTuple) -> float:
        total = self.unary[f[0]]
        nxt = tuple(f[1:]) + (0,)
        for h, psi in enumerate(self.pairwise):
            total += psi[f[h], nxt[h]]
        return float(total)

    def root_probs(self) -> np.ndarray:
        return _normalize(self.unary + self.messages[0])

    def conditional_probs(self, h: int, i: int) -> np.ndarray:
        """Law of i_{h+1} given i_h = i, for h < H - 1."""
        return _normalize(self.pairwise[h][i] + self.messages[h + 1])

    @cached_property
    def _cdfs(self) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        root = np.cumsum(self.root_probs())
        conds = []
        for h in range(len(self.pairwise) - 1):
            logc = self.pairwise[h] + self.messages[h + 1][None, :]
            conds.append(np.cumsum(np.exp(logc - logsumexp(logc, axis=1, keepdims=True)), axis=1))
        return root, tuple(conds)


def _normalize(logw: np.ndarray) -> np.ndarray:
    return np.exp(logw - logsumexp(logw))


def build_chain(state: PosteriorState, fclass: QFunctionClass) -> LogWeightChain:
    eta, alpha = state.eta, state.alpha
    pairwise = []
    for h, C in enumerate(state.losses):
        log_prior = fclass.log_priors[h][:, None]
        log_norm = logsumexp(log_prior - eta * C, axis=0)  # one per f^{h+1}
        pairwise.append(log_prior - alpha * eta * C - alpha * log_norm[None, :])
    unary = state.lam * fclass.state_values[0][:, state.initial_state]
    return LogWeightChain(unary, tuple(pairwise))


def sample_posterior(chain: LogWeightChain, rng_seed: int) -> MemberIndexTuple:
    """Exact draw: backward messages, then forward ancestral sampling by inverse CDF."""
    rng = np.random.default_rng(rng_seed)
    u = rng.random(len(chain.pairwise))
    root, conds = chain._cdfs
    i = _inverse_cdf(root, u[0])
    out = [i]
    for h, cdf in enumerate(conds):
        i = _inverse_cdf(cdf[i], u[h + 1])
        out.append(i)
    return tuple(out)


def _inverse_cdf(cdf: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


def map_tuple(chain: LogWeightChain) -> MemberIndexTuple:
    """Highest-weight tuple by max-product (Viterbi); lowest indices win ties."""
    best = [np.zeros(1)]
    for psi in reversed(chain.pairwise):
        best.append((psi + best[-1][None, :]).max(axis=1))
    best = best[::-1]
    i = int(np.argmax(chain.unary + best[0]))
    out = [i]
    for h in range(len(chain.pairwise) - 1):
        i = int(np.argmax(chain.pairwise[h][i] + best[h + 1]))
        out.append(i)
    return tuple(out)


def _check_cap(sizes, cap) -> None:
    total = int(np.prod(sizes, dtype=object))
    if total > cap:
        raise CapExceeded(f"{total} member tuples exceed the enumeration cap {cap}")


def tuple_log_weights(chain: LogWeightChain, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Unnormalized log weights of every tuple, shape `sizes` (row-major tuple order)."""
    sizes = chain.sizes
    _check_cap(sizes, cap)
    H = len(sizes)
    total = chain.unary.reshape((-1,) + (1,) * (H - 1))
    for h, psi in enumerate(chain.pairwise):
        if h + 1 < H:
            shape = (1,) * h + psi.shape + (1,) * (H - h - 2)
            total = total + psi.reshape(shape)
        else:
            total = total + psi[:, 0].reshape((1,) * h + (-1,))
    return total


def exact_posterior(chain: LogWeightChain, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Tuple probabilities by full enumeration, flattened in `iter_tuples` order."""
    logw = tuple_log_weights(chain, cap).ravel()
    return _normalize(logw)


def chain_joint(chain: LogWeightChain, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Tuple probabilities as the product of sampler conditionals, flattened like `exact_posterior`.

    Computed from the messages that `sample_posterior` uses, so agreement with
    `exact_posterior` checks the sampler's distribution without Monte Carlo.
    """
    sizes = chain.sizes
    _check_cap(sizes, cap)
    joint = chain.root_probs()
    for h in range(len(sizes) - 1):
        cond = np.exp(
            chain.pairwise[h] + chain.messages[h + 1][None, :] - chain.messages[h][:, None]
        )
        joint = (joint.reshape(-1, sizes[h])[:, :, None] * cond[None]).reshape(-1)
    return joint


def posterior_by_enumeration(
    state: PosteriorState, fclass: QFunctionClass, cap: int = DEFAULT_ENUMERATION_CAP
) -> np.ndarray:
    """Direct evaluation of the conditional posterior tuple by tuple (slow reference)."""
    _check_cap(fclass.sizes, cap)
    eta, alpha = state.eta, state.alpha
    logw = []
    for f in iter_tuples(fclass):
        total = state.lam * fclass.state_values[0][f[0], state.initial_state]
        nxt = tuple(f[1:]) + (0,)
        for h, C in enumerate(state.losses):
            j = nxt[h]
            norm = np.log(np.sum(fclass.priors[h] * np.exp(-eta * C[:, j])))
            total += np.log(fclass.priors[h][f[h]]) - alpha * eta * C[f[h], j] - alpha * norm
        logw.append(total)
    return _normalize(np.array(logw))


def excess_loss_delta(
    mdp: TabularMdp,
    fclass: QFunctionClass,
    h: int,
    member: int,
    next_member: int,
    transition: tuple[int, int, float, int],
) -> float:
    """(f^h(x,a) - r - f^{h+1}(x'))^2 - (T*_h f^{h+1}(x,a) - r - f^{h+1}(x'))^2."""
    x, a, r, y = transition
    if h + 1 < fclass.horizon:
        nxt_table = fclass.members[h + 1][next_member]
        nxt_value = float(fclass.state_values[h + 1][next_member, y])
    else:
        nxt_table, nxt_value = None, 0.0
    target = float(bellman_apply(mdp, h, nxt_table)[x, a])
    pred = float(fclass.members[h][member, x, a])
    return (pred - r - nxt_value) ** 2 - (target - r - nxt_value) ** 2
