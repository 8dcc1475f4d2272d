"""Episode loop of conditional posterior sampling, baselines, exact regret, and bounds."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .complexity import ResidualRecorder, ResidualSequenceRecord, class_dimension, dc_bound_linear
from .errors import ConfigError, EmptyCoverSet, EtaTooLarge
from .mdp import (
    DeterministicPolicy,
    TabularMdp,
    occupancy_measures,
    optimal_values,
    policy_value,
    simulate_episode,
)
from .posterior import PosteriorState, build_chain, map_tuple, sample_posterior, update_losses
from .value_class import (
    MemberIndexTuple,
    QFunctionClass,
    check_assumptions,
    greedy_policy,
    kappa,
    tuple_residuals,
)

log = logging.getLogger(__name__)

POSTERIOR_STREAM = 0
ENVIRONMENT_STREAM = 1
ETA_LIMIT = 0.4  # eta * b^2 must not exceed this
CSV_HEADER = "episode,instantaneous_regret,cumulative_regret,sampled_tuple"


def episode_seed(master_seed: int, episode: int, stream: int) -> int:
    """64-bit seed for one (episode, stream) pair.

    SeedSequence(entropy=master_seed, spawn_key=(episode, stream)); stream 0
    drives posterior sampling and policy draws, stream 1 the environment.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(episode), int(stream)))
    return int(ss.generate_state(1, np.uint64)[0])


class AgentType(str, Enum):
    CONDITIONAL_PS = "ConditionalPS"
    NO_OPTIMISM = "NoOptimismAblation"
    RANDOM = "RandomPolicy"
    GREEDY_FIT = "GreedyFit"

    @classmethod
    def parse(cls, value: str | AgentType) -> AgentType:
        if isinstance(value, AgentType):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        aliases = {m.value.lower(): m for m in cls}
        aliases.update({"noptimism": cls.NO_OPTIMISM, "nooptimism": cls.NO_OPTIMISM,
                        "random": cls.RANDOM, "greedy": cls.GREEDY_FIT})
        if key not in aliases:
            raise ConfigError("agent.type", f"unknown agent {value!r}; expected one of "
                              f"{[m.value for m in cls]}")
        return aliases[key]


@dataclass(frozen=True)
class AgentSpec:
    """Agent hyperparameters; None means the default (eta = 0.4 / b^2, tuned lambda)."""

    type: AgentType = AgentType.CONDITIONAL_PS
    eta: float | None = None
    lam: float | None = None
    alpha: float = 1.0
    beta: float = 2.0


@dataclass(frozen=True)
class ResolvedAgent:
    type: AgentType
    eta: float
    lam: float
    alpha: float
    beta: float
    lam_source: str  # which quantities fed lambda


@dataclass
class RegretLedger:
    seed: int
    config_hash: str
    instantaneous: np.ndarray
    tuples: list[MemberIndexTuple | None]
    assumptions_hold: bool = True
    warnings: list[str] = field(default_factory=list)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.instantaneous)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1]) if len(self.instantaneous) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for t, (inst, cum, f) in enumerate(zip(self.instantaneous, self.cumulative, self.tuples)):
            label = "" if f is None else "-".join(str(i) for i in f)
            buf.write(f"{t + 1},{float(inst)!r},{float(cum)!r},{label}\n")
        return buf.getvalue()


@dataclass
class RunResult:
    ledger: RegretLedger
    record: ResidualSequenceRecord | None
    agent: ResolvedAgent


# -- bounds -------------------------------------------------------------------


def _check_eta(eta: float, b: float) -> None:
    if eta > ETA_LIMIT / b**2 * (1 + 1e-12):
        raise EtaTooLarge(f"eta={eta!r} exceeds 0.4 / b^2 = {ETA_LIMIT / b**2!r} for b={b!r}")


def theorem_bound(
    kappa_val: float,
    dc_val: float,
    b: float,
    T: int,
    eta: float,
    lam: float,
    H: int,
    beta: float = 2.0,
) -> float:
    """(lam / eta) dc + (2T / lam) kappa(b / T^beta) + 6 H T^(2 - beta) / lam + b T^(1 - beta)."""
    _check_eta(eta, b)
    if not lam > 0:
        raise ValueError(f"lambda must be positive for the bound, got {lam!r}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    return (
        lam / eta * dc_val
        + 2.0 * T / lam * kappa_val
        + 6.0 * H * T ** (2.0 - beta) / lam
        + b * T ** (1.0 - beta)
    )


def tuned_lambda(kappa_val: float, dc_val: float, b: float, T: int) -> float:
    """sqrt(T kappa / (b^2 dc)), the prescribed tuning with kappa at b / T^2."""
    return math.sqrt(T * kappa_val / (b * b * dc_val))


def bound_minimizing_lambda(kappa_val: float, dc_val: float, eta: float, T: int, H: int,
                            beta: float = 2.0) -> float:
    """The lambda minimizing the general bound, sqrt(eta (2T kappa + 6 H T^(2-beta)) / dc)."""
    return math.sqrt(eta * (2.0 * T * kappa_val + 6.0 * H * T ** (2.0 - beta)) / dc_val)


def tabular_dc(fclass: QFunctionClass, T: int) -> float:
    return dc_bound_linear(class_dimension(fclass), fclass.horizon, T)


def tuned_theorem_bound(
    mdp: TabularMdp, fclass: QFunctionClass, T: int, eta: float | None = None, beta: float = 2.0
) -> dict:
    """Evaluate the bound at the prescribed lambda with exact kappa(b / T^beta)."""
    b = fclass.bound_b
    eta = ETA_LIMIT / b**2 if eta is None else eta
    dc = tabular_dc(fclass, T)
    eps = b / T**beta
    k = kappa(fclass, eps, mdp)
    lam = tuned_lambda(k, dc, b, T)
    source = "tuned"
    if lam <= 0:
        lam, source = bound_minimizing_lambda(k, dc, eta, T, mdp.horizon, beta), "bound-minimizing"
    return {
        "kappa": k, "kappa_eps": eps, "dc": dc, "b": b, "eta": eta, "lambda": lam,
        "lambda_source": source, "beta": beta,
        "bound": theorem_bound(k, dc, b, T, eta, lam, mdp.horizon, beta),
    }


def resolve_agent(agent: AgentSpec, mdp: TabularMdp, fclass: QFunctionClass, T: int) -> ResolvedAgent:
    b = fclass.bound_b
    eta = ETA_LIMIT / b**2 if agent.eta is None else float(agent.eta)
    if not eta > 0:
        raise ConfigError("agent.eta", f"must be positive, got {eta!r}")
    if agent.type in (AgentType.NO_OPTIMISM, AgentType.RANDOM):
        return ResolvedAgent(agent.type, eta, 0.0, agent.alpha, agent.beta, "fixed at 0")
    if agent.lam is not None:
        return ResolvedAgent(agent.type, eta, float(agent.lam), agent.alpha, agent.beta, "config")
    dc = tabular_dc(fclass, T)
    try:
        k = kappa(fclass, b / T**agent.beta, mdp)
    except EmptyCoverSet as exc:
        log.warning("kappa undefined (%s); tuning lambda with kappa = ln|F|", exc)
        k = float(np.sum(np.log(fclass.sizes)))
    lam = tuned_lambda(k, dc, b, T)
    source = f"tuned: kappa={k!r}, dc={dc!r} (|X||A| or feature-dimension bound)"
    if lam <= 0:
        lam = bound_minimizing_lambda(k, dc, eta, T, mdp.horizon, agent.beta)
        source = f"bound-minimizing (kappa=0), dc={dc!r}"
    return ResolvedAgent(agent.type, eta, lam, agent.alpha, agent.beta, source)


# -- episode loops ------------------------------------------------------------


class _RegretOracle:
    def __init__(self, mdp: TabularMdp, fclass: QFunctionClass | None = None):
        self.mdp, self.fclass = mdp, fclass
        _, V = optimal_values(mdp)
        self.v_star = float(V[0, mdp.initial_state])
        self._cache: dict[MemberIndexTuple, tuple[DeterministicPolicy, float]] = {}

    def for_tuple(self, f: MemberIndexTuple) -> tuple[DeterministicPolicy, float]:
        if f not in self._cache:
            policy = greedy_policy(self.fclass, f)
            self._cache[f] = (policy, self.v_star - policy_value(self.mdp, policy))
        return self._cache[f]

    def for_policy(self, policy: DeterministicPolicy) -> float:
        return self.v_star - policy_value(self.mdp, policy)


def _assumption_warnings(mdp: TabularMdp, fclass: QFunctionClass) -> tuple[bool, list[str]]:
    report = check_assumptions(mdp, fclass, 1e-9)
    msgs = []
    for name in ("realizable", "bounded", "complete"):
        if not getattr(report, name):
            msgs.append(f"assumption '{name}' fails: {report.witnesses.get(name)}")
    for m in msgs:
        log.warning(m)
    return report.all_hold, msgs


def run_algorithm1(
    agent: AgentSpec | ResolvedAgent,
    mdp: TabularMdp,
    fclass: QFunctionClass,
    T: int,
    seed: int,
    config_hash: str = "",
) -> RunResult:
    """Sample f_t from the posterior, play its greedy policy, update the TD losses."""
    if T < 1:
        raise ConfigError("T", f"must be >= 1, got {T!r}")
    fclass.matches(mdp)
    if isinstance(agent, AgentSpec):
        agent = resolve_agent(agent, mdp, fclass, T)
    ok, warnings = _assumption_warnings(mdp, fclass)
    oracle = _RegretOracle(mdp, fclass)
    recorder = ResidualRecorder(mdp, fclass)
    state = PosteriorState.initial(fclass, agent.eta, agent.lam, agent.alpha, mdp.initial_state)
    regrets = np.empty(T)
    tuples: list[MemberIndexTuple | None] = []
    for t in range(T):
        chain = build_chain(state, fclass)
        if agent.type is AgentType.GREEDY_FIT:
            f = map_tuple(chain)
        else:
            f = sample_posterior(chain, episode_seed(seed, t, POSTERIOR_STREAM))
        policy, regrets[t] = oracle.for_tuple(f)
        tuples.append(f)
        recorder.append(f)
        trajectory = simulate_episode(mdp, policy, episode_seed(seed, t, ENVIRONMENT_STREAM))
        state = update_losses(state, fclass, trajectory)
    ledger = RegretLedger(int(seed), config_hash, regrets, tuples, ok, warnings)
    return RunResult(ledger, recorder.record(), agent)


def run_random(mdp: TabularMdp, T: int, seed: int, config_hash: str = "") -> RegretLedger:
    """Uniformly random action per (h, x), redrawn every episode."""
    oracle = _RegretOracle(mdp)
    regrets = np.empty(T)
    for t in range(T):
        rng = np.random.default_rng(episode_seed(seed, t, POSTERIOR_STREAM))
        policy = DeterministicPolicy(rng.integers(mdp.num_actions, size=(mdp.horizon, mdp.num_states)))
        regrets[t] = oracle.for_policy(policy)
        simulate_episode(mdp, policy, episode_seed(seed, t, ENVIRONMENT_STREAM))
    return RegretLedger(int(seed), config_hash, regrets, [None] * T)


def run_baseline(
    agent: AgentSpec, mdp: TabularMdp, fclass: QFunctionClass, T: int, seed: int, config_hash: str = ""
) -> RunResult:
    if agent.type is AgentType.RANDOM:
        resolved = resolve_agent(agent, mdp, fclass, T)
        return RunResult(run_random(mdp, T, seed, config_hash), None, resolved)
    if agent.type is AgentType.NO_OPTIMISM:
        return run_algorithm1(agent, mdp, fclass, T, seed, config_hash)
    if agent.type is AgentType.GREEDY_FIT:
        return run_algorithm1(agent, mdp, fclass, T, seed, config_hash)
    raise ConfigError("agent.type", f"{agent.type.value} is not a baseline")


def run_agent(
    agent: AgentSpec, mdp: TabularMdp, fclass: QFunctionClass, T: int, seed: int, config_hash: str = ""
) -> RunResult:
    if agent.type is AgentType.CONDITIONAL_PS:
        return run_algorithm1(agent, mdp, fclass, T, seed, config_hash)
    return run_baseline(agent, mdp, fclass, T, seed, config_hash)


@dataclass(frozen=True)
class SeedSummary:
    median: float
    q25: float
    q75: float

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25


def summarize(totals: Sequence[float]) -> SeedSummary:
    q25, med, q75 = np.percentile(np.asarray(totals, dtype=float), [25, 50, 75])
    return SeedSummary(float(med), float(q25), float(q75))


def run_seeds(
    agent: AgentSpec, mdp: TabularMdp, fclass: QFunctionClass, T: int, seeds: Sequence[int],
    config_hash: str = "",
) -> list[RunResult]:
    """Independent runs, one per seed; resolution of lambda is shared."""
    if agent.type is AgentType.RANDOM:
        return [run_baseline(agent, mdp, fclass, T, s, config_hash) for s in seeds]
    resolved = resolve_agent(agent, mdp, fclass, T)
    return [run_algorithm1(resolved, mdp, fclass, T, s, config_hash) for s in seeds]


def fit_regret_exponent(horizons: Sequence[int], regrets: Sequence[float]) -> float:
    """Least-squares slope of log Reg(T) against log T."""
    slope, _ = np.polyfit(np.log(np.asarray(horizons, float)), np.log(np.asarray(regrets, float)), 1)
    return float(slope)


# -- value decomposition ------------------------------------------------------


@dataclass(frozen=True)
class DecompositionReport:
    reg: float
    sum_residual_terms: float
    delta_f1: float
    gap: float


def value_decomposition_check(
    mdp: TabularMdp, fclass: QFunctionClass, f: MemberIndexTuple
) -> DecompositionReport:
    """Reg(f) against E_{pi_f} sum_h E_h(f; x^h, a^h) - (f^1(x^1) - V*(x^1))."""
    policy = greedy_policy(fclass, f)
    _, V = optimal_values(mdp)
    x1 = mdp.initial_state
    reg = float(V[0, x1] - policy_value(mdp, policy))
    occ = occupancy_measures(mdp, policy)
    residual_sum = float(np.sum(occ * tuple_residuals(mdp, fclass, f)))
    delta = float(fclass.state_values[0][f[0], x1] - V[0, x1])
    return DecompositionReport(reg, residual_sum, delta, abs(reg - (residual_sum - delta)))
