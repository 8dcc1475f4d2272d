"""Structural complexity: decoupling-coefficient checks, closed-form bounds, BE dimension."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import CapExceeded, NonPositiveEntry
from .mdp import TabularMdp, occupancy_measures
from .value_class import (
    MemberIndexTuple,
    QFunctionClass,
    greedy_policy,
    kappa,
    residual_tables,
    tuple_residuals,
)

EXACT_MEASURE_CAP = 8
GREEDY_CANDIDATE_LIMIT = 64


# -- residual records ---------------------------------------------------------


@dataclass
class ResidualSequenceRecord:
    """Occupancy measures and Bellman residual tables of a sequence f_1, ..., f_T.

    Both arrays have shape (T, H, X, A). Expected residuals and cross terms are
    derived from them exactly; the cross terms for s < t are never stored densely
    unless asked for.
    """

    occupancy: np.ndarray
    residuals: np.ndarray

    @classmethod
    def empty(cls, horizon: int, num_states: int, num_actions: int) -> ResidualSequenceRecord:
        shape = (0, horizon, num_states, num_actions)
        return cls(np.zeros(shape), np.zeros(shape))

    @property
    def length(self) -> int:
        return self.occupancy.shape[0]

    def expected_residuals(self) -> np.ndarray:
        """E_{pi_{f_t}}[E_h(f_t; x^h, a^h)], shape (T, H)."""
        return np.einsum("thxa,thxa->th", self.occupancy, self.residuals)

    def cross_row_sums(self) -> np.ndarray:
        """sum_{s < t} E_{pi_{f_s}}[E_h(f_t)^2], shape (T, H)."""
        prev = np.cumsum(self.occupancy, axis=0) - self.occupancy
        return np.einsum("thxa,thxa->th", prev, self.residuals**2)

    def cross_terms(self) -> np.ndarray:
        """Dense table [s, t, h] = E_{pi_{f_s}}[E_h(f_t)^2] for s < t, zero elsewhere."""
        full = np.einsum("shxa,thxa->sth", self.occupancy, self.residuals**2)
        T = self.length
        mask = np.triu(np.ones((T, T), dtype=bool), k=1)
        return np.where(mask[:, :, None], full, 0.0)


class ResidualRecorder:
    """Builds a ResidualSequenceRecord one episode at a time, caching per tuple."""

    def __init__(self, mdp: TabularMdp, fclass: QFunctionClass):
        self.mdp, self.fclass = mdp, fclass
        self._cache: dict[MemberIndexTuple, tuple[np.ndarray, np.ndarray]] = {}
        self._occ: list[np.ndarray] = []
        self._res: list[np.ndarray] = []

    def tables(self, f: MemberIndexTuple) -> tuple[np.ndarray, np.ndarray]:
        if f not in self._cache:
            policy = greedy_policy(self.fclass, f)
            self._cache[f] = (
                occupancy_measures(self.mdp, policy),
                tuple_residuals(self.mdp, self.fclass, f),
            )
        return self._cache[f]

    def append(self, f: MemberIndexTuple) -> None:
        occ, res = self.tables(f)
        self._occ.append(occ)
        self._res.append(res)

    def record(self) -> ResidualSequenceRecord:
        if not self._occ:
            c = self.fclass
            return ResidualSequenceRecord.empty(c.horizon, c.num_states, c.num_actions)
        return ResidualSequenceRecord(np.stack(self._occ), np.stack(self._res))


def record_residuals(
    mdp: TabularMdp, fclass: QFunctionClass, f_sequence: Sequence[MemberIndexTuple]
) -> ResidualSequenceRecord:
    recorder = ResidualRecorder(mdp, fclass)
    for f in f_sequence:
        recorder.append(tuple(f))
    return recorder.record()


# -- decoupling coefficient ---------------------------------------------------


@dataclass(frozen=True)
class DcCheck:
    mu: float
    K: float
    lhs: float
    rhs: float
    satisfied: bool

    def to_dict(self) -> dict:
        return {"mu": self.mu, "K": self.K, "lhs": self.lhs, "rhs": self.rhs,
                "satisfied": self.satisfied}


def dc_inequality_check(record: ResidualSequenceRecord, mu: float, K: float) -> DcCheck:
    """sum_h sum_t E[E_h(f_t)] <= mu * sum_h sum_t sum_{s<t} E_{pi_{f_s}}[E_h(f_t)^2] + K / (4 mu)."""
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu!r}")
    lhs = float(record.expected_residuals().sum())
    rhs = float(mu * record.cross_row_sums().sum() + K / (4 * mu))
    return DcCheck(float(mu), float(K), lhs, rhs, lhs <= rhs)


def required_K(record: ResidualSequenceRecord, mu: float) -> float:
    """Smallest K for which this one sequence satisfies the defining inequality."""
    lhs = record.expected_residuals().sum()
    return float(max(0.0, 4 * mu * (lhs - mu * record.cross_row_sums().sum())))


def dc_adversarial_search(
    mdp: TabularMdp,
    fclass: QFunctionClass,
    T: int,
    mu: float,
    num_sequences: int = 32,
    seed: int = 0,
) -> tuple[float, ResidualSequenceRecord]:
    """Best of `num_sequences` uniformly random tuple sequences of length T.

    Returns the largest K any of them requires (a lower estimate of the
    decoupling coefficient at mu) and that sequence's record.
    """
    rng = np.random.default_rng(seed)
    recorder = ResidualRecorder(mdp, fclass)
    sizes = np.array(fclass.sizes)
    best, worst = -1.0, None
    for _ in range(num_sequences):
        draws = (rng.random((T, len(sizes))) * sizes).astype(int)
        occ, res = zip(*(recorder.tables(tuple(int(i) for i in row)) for row in draws))
        record = ResidualSequenceRecord(np.stack(occ), np.stack(res))
        need = required_K(record, mu)
        if need > best:
            best, worst = need, record
    return best, worst


def dc_bound_linear(d: int, H: int, T: int) -> float:
    return 2.0 * d * H * (1.0 + math.log(2.0 * H * T))


def dc_bound_glm(d: int, H: int, T: int, k: float, K_lip: float) -> float:
    if not 0 < k <= K_lip:
        raise ValueError(f"need 0 < k <= K, got k={k!r}, K={K_lip!r}")
    return dc_bound_linear(d, H, T) * (K_lip / k) ** 2


def dc_bound_from_be(be_dim: int, H: int, T: int, mu: float) -> float:
    return (1.0 + 4.0 * mu + math.log(T)) * H * be_dim


def helper_sum_sqrt(xs: Sequence[float]) -> float:
    """sum_i x_i / sqrt(sum_i i * x_i^2) with 1-based i; at most sqrt(1 + ln n)."""
    x = np.asarray(xs, dtype=float)
    if x.size == 0 or np.any(~(x > 0)):
        raise NonPositiveEntry("helper_sum_sqrt needs a nonempty sequence of positive reals")
    i = np.arange(1, x.size + 1)
    return float(x.sum() / math.sqrt(float(np.sum(i * x**2))))


# -- Bellman-Eluder dimension -------------------------------------------------


class BeMode(str, Enum):
    EXACT_TINY = "ExactTiny"
    GREEDY = "Greedy"

    @classmethod
    def parse(cls, value: str | BeMode) -> BeMode:
        if isinstance(value, BeMode):
            return value
        for m in cls:
            if m.value.lower() == str(value).lower():
                return m
        raise ValueError(f"unknown BE mode {value!r}; expected ExactTiny or Greedy")


@dataclass(frozen=True)
class BeDimension:
    value: int
    mode: BeMode
    per_step: tuple[int, ...] = field(default=())

    @property
    def is_lower_bound(self) -> bool:
        return self.mode is BeMode.GREEDY

    def to_dict(self) -> dict:
        return {"value": self.value, "mode": self.mode.value, "lower_bound": self.is_lower_bound,
                "per_step": list(self.per_step)}


def _dedupe_rows(rows: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    kept: list[np.ndarray] = []
    for r in rows:
        if not any(np.max(np.abs(r - k)) <= atol for k in kept):
            kept.append(r)
    return np.array(kept)


def greedy_occupancy_family(
    mdp: TabularMdp, fclass: QFunctionClass, cap: int = 100_000
) -> list[np.ndarray]:
    """Distinct step-h occupancy measures of greedy policies of class members.

    Returns one (m_h, X * A) array per step. Any combination of per-step greedy
    tables is the greedy policy of some tuple, since the class is a product.
    """
    X, A = mdp.num_states, mdp.num_actions
    tables = [np.unique(np.argmax(m, axis=2), axis=0) for m in fclass.members]
    dists = np.zeros((1, X))
    dists[0, mdp.initial_state] = 1.0
    out = []
    for h in range(mdp.horizon):
        if len(dists) * len(tables[h]) > cap:
            raise CapExceeded(
                f"step {h}: {len(dists) * len(tables[h])} policy/distribution pairs exceed {cap}"
            )
        occ, nxt = [], []
        for d in dists:
            for acts in tables[h]:
                o = np.zeros((X, A))
                o[np.arange(X), acts] = d
                occ.append(o.ravel())
                nxt.append(d @ mdp.transitions[h][np.arange(X), acts])
        out.append(_dedupe_rows(np.array(occ)))
        dists = _dedupe_rows(np.array(nxt))
    return out


def _longest_exact(sumsq_ok: np.ndarray, big: np.ndarray, m: int) -> int:
    """Subset DP: longest ordering where each new measure has a witness g that is
    small on the predecessors (sumsq_ok[S, g]) and big on itself (big[g, nu])."""
    valid = (sumsq_ok.astype(float) @ big.astype(float)) > 0  # (2^m, m)
    reach = np.zeros(1 << m, dtype=bool)
    reach[0] = True
    best = 0
    for S in range(1 << m):
        if not reach[S]:
            continue
        best = max(best, bin(S).count("1"))
        for nu in range(m):
            bit = 1 << nu
            if not S & bit and valid[S, nu]:
                reach[S | bit] = True
    return best


def _longest_greedy(values: np.ndarray, c: float) -> int:
    """Extend with the lowest-index admissible measure until none is admissible."""
    n_g, m = values.shape
    big = np.abs(values) >= c
    sumsq = np.zeros(n_g)
    used = np.zeros(m, dtype=bool)
    length = 0
    while True:
        small = sumsq < c * c
        ok = (small[:, None] & big).any(axis=0) & ~used
        if not ok.any():
            return length
        nu = int(np.argmax(ok))
        used[nu] = True
        sumsq += values[:, nu] ** 2
        length += 1


def distributional_eluder_dim(
    values: np.ndarray, epsilon: float, mode: BeMode, cap: int = EXACT_MEASURE_CAP
) -> int:
    """DE dimension from the table values[g, nu] = E_nu[g].

    The longest admissible length is piecewise constant in the threshold, and
    its sup over thresholds above epsilon is attained just below one of the
    values |E_nu g| > epsilon. Just below c, a witness g needs
    sqrt(sum over predecessors of (E g)^2) < c and |E_nu g| >= c.
    """
    mode = BeMode.parse(mode)
    n_g, m = values.shape
    if mode is BeMode.EXACT_TINY and m > cap:
        raise CapExceeded(f"{m} distinct measures exceed the exact-search cap {cap}")
    mags = np.abs(values)
    cands = np.unique(mags[mags > epsilon])
    if cands.size == 0:
        return 0
    if mode is BeMode.GREEDY:
        if cands.size > GREEDY_CANDIDATE_LIMIT:
            idx = np.unique(np.linspace(0, cands.size - 1, GREEDY_CANDIDATE_LIMIT).round().astype(int))
            cands = cands[idx]
        return max(_longest_greedy(values, float(c)) for c in cands)
    subsets = np.arange(1 << m)
    member = (subsets[:, None] >> np.arange(m)[None, :]) & 1  # (2^m, m)
    sumsq = member.astype(float) @ (values**2).T  # (2^m, n_g)
    best = 0
    for c in cands:
        best = max(best, _longest_exact(sumsq < c * c, mags >= c, m))
        if best == m:
            break
    return best


def bellman_eluder_dim(
    mdp: TabularMdp,
    fclass: QFunctionClass,
    epsilon: float,
    mode: BeMode | str = BeMode.EXACT_TINY,
    cap: int = EXACT_MEASURE_CAP,
) -> BeDimension:
    """max_h DE dimension of the step-h residual functions over greedy occupancy measures."""
    mode = BeMode.parse(mode)
    measures = greedy_occupancy_family(mdp, fclass)
    per_step = []
    for h in range(mdp.horizon):
        g = residual_tables(mdp, fclass, h).reshape(-1, mdp.num_states * mdp.num_actions)
        g = np.unique(g, axis=0)
        per_step.append(distributional_eluder_dim(g @ measures[h].T, epsilon, mode, cap))
    return BeDimension(max(per_step), mode, tuple(per_step))


# -- report -------------------------------------------------------------------


def class_dimension(fclass: QFunctionClass) -> int:
    """Feature dimension for feature-backed classes, |X||A| for tables."""
    if fclass.backing is not None:
        return fclass.backing.dim
    return fclass.num_states * fclass.num_actions


def complexity_report(
    mdp: TabularMdp,
    fclass: QFunctionClass,
    epsilon: float,
    mu_list: Sequence[float],
    T: int,
    be_mode: BeMode | str = BeMode.EXACT_TINY,
    record: ResidualSequenceRecord | None = None,
    seed: int = 0,
) -> dict:
    """Complexity report document.

    dc checks use `record` when given, otherwise the worst of several random
    tuple sequences of length T.
    """
    H = mdp.horizon
    d = class_dimension(fclass)
    K_lin = dc_bound_linear(d, H, T)
    link = fclass.backing.link if fclass.backing is not None else None
    k, K_lip = (link.k, link.K) if link is not None and link.kind != "identity" else (1.0, 1.0)
    K_glm = dc_bound_glm(d, H, T, k, K_lip)
    K_check = K_glm if link is not None and link.kind != "identity" else K_lin

    checks = []
    for mu in mu_list:
        if record is not None:
            checks.append(dc_inequality_check(record, mu, K_check).to_dict())
        else:
            _, worst = dc_adversarial_search(mdp, fclass, T, mu, seed=seed)
            checks.append(dc_inequality_check(worst, mu, K_check).to_dict())

    be = bellman_eluder_dim(mdp, fclass, epsilon, be_mode)
    return {
        "kappa": kappa(fclass, epsilon, mdp),
        "kappa_eps": float(epsilon),
        "dc_checks": checks,
        "be_dim": be.to_dict(),
        "bounds": {
            "linear": K_lin,
            "glm": K_glm,
            "from_be": dc_bound_from_be(be.value, H, T, max(mu_list) if mu_list else 1.0),
        },
    }
