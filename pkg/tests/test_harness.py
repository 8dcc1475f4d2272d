from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from condpost.complexity import dc_bound_linear, dc_inequality_check
from condpost.errors import ConfigError, EtaTooLarge
from condpost.harness import (
    CSV_HEADER,
    AgentSpec,
    AgentType,
    episode_seed,
    fit_regret_exponent,
    resolve_agent,
    run_agent,
    run_algorithm1,
    run_random,
    run_seeds,
    summarize,
    theorem_bound,
    tuned_lambda,
    tuned_theorem_bound,
    value_decomposition_check,
)
from condpost.instances import gen_instance
from condpost.mdp import TabularMdp, optimal_values
from condpost.posterior import PosteriorState, build_chain, exact_posterior
from condpost.value_class import QFunctionClass, closure_class, iter_tuples

from conftest import random_class, random_mdp


def _closed(mdp, seed=0, extra=1):
    rng = np.random.default_rng(seed)
    cands = [[rng.random((mdp.num_states, mdp.num_actions)) for _ in range(extra)]
             for _ in range(mdp.horizon)]
    return closure_class(mdp, cands)


def _q_star_class(mdp):
    Q, _ = optimal_values(mdp)
    return QFunctionClass.from_tables([Q[h][None] for h in range(mdp.horizon)])


# -- seeds ------------------------------------------------------------------------------


def test_episode_seed_follows_seed_sequence():
    ref = np.random.SeedSequence(42, spawn_key=(7, 1)).generate_state(1, np.uint64)[0]
    assert episode_seed(42, 7, 1) == int(ref)


def test_episode_seeds_are_distinct_across_streams_and_episodes():
    seeds = {episode_seed(3, t, s) for t in range(200) for s in (0, 1)}
    assert len(seeds) == 400
    assert all(0 <= s < 2**64 for s in seeds)


# -- episode loop -------------------------------------------------------------------------


def test_q_star_singleton_has_zero_regret(two_state_mdp):
    res = run_algorithm1(AgentSpec(lam=1.0), two_state_mdp, _q_star_class(two_state_mdp), 30, 5)
    assert np.all(res.ledger.instantaneous == 0.0)
    assert res.ledger.assumptions_hold


def test_single_episode_without_tilt_draws_from_prior(two_state_mdp):
    cls = random_class(2, two_state_mdp, (3, 2))
    prior = exact_posterior(build_chain(PosteriorState.initial(cls, 0.1, 0.0), cls))
    index = {f: k for k, f in enumerate(iter_tuples(cls))}
    n = 3000
    counts = np.zeros(len(index))
    agent = AgentSpec(AgentType.NO_OPTIMISM, eta=0.05)
    for seed in range(n):
        f = run_algorithm1(agent, two_state_mdp, cls, 1, seed).ledger.tuples[0]
        counts[index[f]] += 1
    assert chisquare(counts, prior * n).pvalue > 0.001


def test_run_is_bit_reproducible():
    mdp, cls = gen_instance("random_tabular")
    a = run_algorithm1(AgentSpec(), mdp, cls, 40, 123, "h")
    b = run_algorithm1(AgentSpec(), mdp, cls, 40, 123, "h")
    assert a.ledger.to_csv() == b.ledger.to_csv()
    assert a.ledger.instantaneous.tobytes() == b.ledger.instantaneous.tobytes()
    c = run_algorithm1(AgentSpec(), mdp, cls, 40, 124, "h")
    assert c.ledger.tuples != a.ledger.tuples


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_regret_within_range_and_cumulative_nondecreasing(seed):
    mdp = random_mdp(seed, X=3, A=2, H=3)
    cls = _closed(mdp, seed, extra=2)
    ledger = run_algorithm1(AgentSpec(), mdp, cls, 15, seed).ledger
    inst = ledger.instantaneous
    assert np.all(inst >= -1e-10) and np.all(inst <= mdp.horizon + 1e-10)
    assert np.all(np.diff(ledger.cumulative) >= -1e-12)


def test_algorithm_record_passes_dc_check():
    mdp, cls = gen_instance("random_tabular")
    T = 60
    res = run_algorithm1(AgentSpec(), mdp, cls, T, 9)
    K = dc_bound_linear(mdp.num_states * mdp.num_actions, mdp.horizon, T)
    for mu in (0.1, 0.5, 1.0):
        assert dc_inequality_check(res.record, mu, K).satisfied


def test_assumption_violation_warns_but_runs(two_state_mdp):
    cls = random_class(4, two_state_mdp, (2, 2))
    res = run_algorithm1(AgentSpec(lam=0.5), two_state_mdp, cls, 5, 1)
    assert not res.ledger.assumptions_hold
    assert any("realizable" in w for w in res.ledger.warnings)
    assert len(res.ledger.instantaneous) == 5


def test_bad_horizon_rejected(two_state_mdp):
    with pytest.raises(ConfigError):
        run_algorithm1(AgentSpec(), two_state_mdp, _closed(two_state_mdp), 0, 1)


def test_csv_layout(two_state_mdp):
    ledger = run_algorithm1(AgentSpec(lam=1.0), two_state_mdp, _closed(two_state_mdp), 3, 2).ledger
    lines = ledger.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "1" and len(first[3].split("-")) == 2


# -- baselines ----------------------------------------------------------------------------


def test_random_policy_on_zero_reward_mdp_has_zero_regret():
    mdp = random_mdp(1, X=3, A=2, H=3)
    mdp = TabularMdp(mdp.transitions, np.zeros_like(mdp.mean_rewards), 0)
    ledger = run_random(mdp, 25, 3)
    assert np.all(ledger.instantaneous == 0.0)
    assert ledger.to_csv().splitlines()[1].endswith(",")


def test_greedy_fit_on_singleton_matches_algorithm(two_state_mdp):
    cls = _q_star_class(two_state_mdp)
    a = run_algorithm1(AgentSpec(lam=1.0), two_state_mdp, cls, 10, 4).ledger
    g = run_agent(AgentSpec(AgentType.GREEDY_FIT, lam=1.0), two_state_mdp, cls, 10, 4).ledger
    assert a.to_csv() == g.to_csv()


def test_no_optimism_resolves_to_zero_lambda(two_state_mdp):
    agent = resolve_agent(AgentSpec(AgentType.NO_OPTIMISM, lam=3.0), two_state_mdp,
                          _closed(two_state_mdp), 10)
    assert agent.lam == 0.0


def test_agent_type_parsing():
    assert AgentType.parse("ConditionalPS") is AgentType.CONDITIONAL_PS
    assert AgentType.parse("no_optimism_ablation") is AgentType.NO_OPTIMISM
    with pytest.raises(ConfigError, match="agent.type"):
        AgentType.parse("Thompson")


def test_run_seeds_and_summary():
    mdp, cls = gen_instance("random_tabular")
    runs = run_seeds(AgentSpec(), mdp, cls, 10, [1, 2, 3])
    assert [r.ledger.seed for r in runs] == [1, 2, 3]
    s = summarize([3.0, 1.0, 2.0, 10.0])
    assert s.median == 2.5 and s.q25 == 1.75 and s.q75 == 4.75


def test_regret_exponent_fit_recovers_power_law():
    Ts = [100, 200, 400, 800]
    assert fit_regret_exponent(Ts, [3 * t**0.5 for t in Ts]) == pytest.approx(0.5, abs=1e-12)


# -- theorem bound ---------------------------------------------------------------------------


def _bound_by_hand(kappa_val, dc, b, T, eta, lam, H, beta):
    optimism = dc * lam / eta
    coverage = (2 * kappa_val * T + 6 * H * T ** (2 - beta)) / lam
    return optimism + coverage + b / T ** (beta - 1)


def test_bound_concrete_value():
    k, dc, b, T, eta, H = math.log(16), 88.763, 2.0, 1000, 0.1, 3
    lam = tuned_lambda(k, dc, b, T)
    assert lam == pytest.approx(math.sqrt(1000 * math.log(16) / (4 * 88.763)), rel=1e-15)
    value = theorem_bound(k, dc, b, T, eta, lam, H)
    assert value == pytest.approx(_bound_by_hand(k, dc, b, T, eta, lam, H, 2.0), rel=1e-13)
    assert value == pytest.approx(4471.2352334, rel=1e-10)


@settings(max_examples=50)
@given(st.floats(0, 20), st.floats(0, 500), st.floats(1, 5), st.integers(1, 10**5),
       st.floats(0.01, 1), st.floats(0.01, 50), st.integers(1, 10), st.floats(0.5, 3))
def test_bound_matches_hand_derivation(k, dc, b, T, frac, lam, H, beta):
    eta = 0.4 * frac / b**2
    got = theorem_bound(k, dc, b, T, eta, lam, H, beta)
    assert got == pytest.approx(_bound_by_hand(k, dc, b, T, eta, lam, H, beta), rel=1e-12)


def test_bound_degenerate_class_vanishes():
    for beta in (5.0, 10.0, 20.0):
        assert theorem_bound(0.0, 0.0, 1.0, 100, 0.4, 1.0, 1, beta) == pytest.approx(
            6 * 100 ** (2 - beta) + 100 ** (1 - beta), rel=1e-12)
    assert theorem_bound(0.0, 0.0, 1.0, 100, 0.4, 1.0, 1, 20.0) < 1e-30


def test_bound_rejects_large_eta():
    with pytest.raises(EtaTooLarge):
        theorem_bound(1.0, 1.0, 2.0, 10, 0.11, 1.0, 1)
    theorem_bound(1.0, 1.0, 2.0, 10, 0.1, 1.0, 1)


def test_bound_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        theorem_bound(1.0, 1.0, 1.0, 10, 0.1, 0.0, 1)


@pytest.mark.parametrize("T", [100, 1000, 10**4])
def test_doubling_T_scales_dominant_term(T):
    k, b, eta, d, H = math.log(64), 2.0, 0.1, 4, 3

    def dominant(t):
        dc = dc_bound_linear(d, H, t)
        lam = tuned_lambda(k, dc, b, t)
        return lam / eta * dc + 2 * t / lam * k

    ratio = dominant(2 * T) / dominant(T)
    expected = math.sqrt(2) * math.sqrt(dc_bound_linear(d, H, 2 * T) / dc_bound_linear(d, H, T))
    assert ratio == pytest.approx(expected, rel=1e-12)


def test_tuned_bound_document():
    mdp, cls = gen_instance("random_tabular")
    doc = tuned_theorem_bound(mdp, cls, 500)
    assert doc["eta"] == pytest.approx(0.4 / cls.bound_b**2)
    assert doc["kappa_eps"] == cls.bound_b / 500**2
    assert doc["bound"] > 0


def test_zero_kappa_uses_bound_minimizing_lambda(two_state_mdp):
    agent = resolve_agent(AgentSpec(), two_state_mdp, _q_star_class(two_state_mdp), 100)
    assert agent.lam > 0
    assert agent.lam_source.startswith("bound-minimizing")


# -- value decomposition ---------------------------------------------------------------------


def test_decomposition_zero_for_q_star(two_state_mdp):
    rep = value_decomposition_check(two_state_mdp, _q_star_class(two_state_mdp), (0, 0))
    assert abs(rep.reg) <= 1e-12 and abs(rep.sum_residual_terms) <= 1e-12
    assert abs(rep.delta_f1) <= 1e-12 and rep.gap <= 1e-12


def test_decomposition_with_shifted_first_step(two_state_mdp):
    Q, _ = optimal_values(two_state_mdp)
    c = 0.37
    cls = QFunctionClass.from_tables([(Q[0] + c)[None], Q[1][None]])
    rep = value_decomposition_check(two_state_mdp, cls, (0, 0))
    assert abs(rep.reg) <= 1e-12
    assert rep.delta_f1 == pytest.approx(c, abs=1e-12)
    assert rep.sum_residual_terms == pytest.approx(c, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_decomposition_gap_for_random_tuples(seed):
    mdp = random_mdp(seed, X=3, A=2, H=3)
    cls = random_class(seed, mdp, (4, 4, 4), scale=2.0)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        f = tuple(int(rng.integers(n)) for n in cls.sizes)
        assert value_decomposition_check(mdp, cls, f).gap < 1e-10
