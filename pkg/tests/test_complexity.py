from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condpost.complexity import (
    BeMode,
    ResidualSequenceRecord,
    bellman_eluder_dim,
    complexity_report,
    dc_adversarial_search,
    dc_bound_from_be,
    dc_bound_glm,
    dc_bound_linear,
    dc_inequality_check,
    distributional_eluder_dim,
    greedy_occupancy_family,
    helper_sum_sqrt,
    record_residuals,
    required_K,
)
from condpost.errors import CapExceeded, NonPositiveEntry
from condpost.mdp import optimal_values
from condpost.value_class import (
    QFunctionClass,
    check_assumptions,
    closure_class,
    greedy_policy,
    tuple_residuals,
)

from conftest import random_class, random_mdp


def _closed(mdp, seed=0, extra=1):
    rng = np.random.default_rng(seed)
    cands = [[rng.random((mdp.num_states, mdp.num_actions)) for _ in range(extra)]
             for _ in range(mdp.horizon)]
    return closure_class(mdp, cands)


# -- residual records ---------------------------------------------------------------


def test_q_star_sequence_has_zero_residuals(two_state_mdp):
    cls = _closed(two_state_mdp)
    f = tuple(check_assumptions(two_state_mdp, cls, 1e-12).witnesses["realizable"]["tuple"])
    rec = record_residuals(two_state_mdp, cls, [f] * 4)
    assert np.max(np.abs(rec.expected_residuals())) <= 1e-12
    assert np.max(np.abs(rec.cross_terms())) <= 1e-12


def test_single_episode_record_has_no_cross_terms(two_state_mdp):
    cls = random_class(0, two_state_mdp, (3, 3))
    rec = record_residuals(two_state_mdp, cls, [(1, 2)])
    assert rec.length == 1
    assert np.all(rec.cross_terms() == 0) and np.all(rec.cross_row_sums() == 0)
    check = dc_inequality_check(rec, 1.0, 0.0)
    assert check.lhs == pytest.approx(rec.expected_residuals().sum(), abs=0)


def test_cross_row_sums_match_dense_table(two_state_mdp):
    cls = random_class(1, two_state_mdp, (3, 3))
    rec = record_residuals(two_state_mdp, cls, [(0, 1), (2, 2), (1, 0), (0, 1), (2, 0)])
    np.testing.assert_allclose(rec.cross_terms().sum(axis=0), rec.cross_row_sums(), atol=1e-14)


def test_residual_magnitudes_bounded_by_b(two_state_mdp):
    cls = random_class(2, two_state_mdp, (3, 3), scale=2.0)
    rec = record_residuals(two_state_mdp, cls, [(0, 1), (2, 2), (1, 0)])
    assert np.all(np.abs(rec.residuals) <= cls.bound_b)


def _mc_expectations(mdp, policy, tables, n, seed):
    """Monte Carlo E_pi[table_h(x^h, a^h)] per h with standard errors."""
    rng = np.random.default_rng(seed)
    states = np.full(n, mdp.initial_state)
    means, ses = [], []
    for h in range(mdp.horizon):
        acts = policy.actions[h, states]
        vals = tables[h][states, acts]
        means.append(vals.mean())
        ses.append(vals.std(ddof=1) / math.sqrt(n))
        cdf = np.cumsum(mdp.transitions[h, states, acts], axis=1)
        states = (rng.random(n)[:, None] > cdf).sum(axis=1)
    return np.array(means), np.array(ses)


def test_record_matches_monte_carlo(two_state_mdp):
    cls = random_class(3, two_state_mdp, (3, 3))
    seq = [(0, 1), (2, 0), (1, 2)]
    rec = record_residuals(two_state_mdp, cls, seq)
    n = 10**6
    for t, f in enumerate(seq):
        pol = greedy_policy(cls, f)
        res = tuple_residuals(two_state_mdp, cls, f)
        mean, se = _mc_expectations(two_state_mdp, pol, res, n, seed=t)
        assert np.all(np.abs(mean - rec.expected_residuals()[t]) <= 3 * se + 1e-12)
        for s in range(t):
            mean, se = _mc_expectations(two_state_mdp, greedy_policy(cls, seq[s]),
                                        tuple_residuals(two_state_mdp, cls, seq[t]) ** 2, n,
                                        seed=100 + 10 * t + s)
            assert np.all(np.abs(mean - rec.cross_terms()[s, t]) <= 3 * se + 1e-12)


# -- dc inequality --------------------------------------------------------------------


def test_zero_record_satisfied_for_any_K():
    rec = ResidualSequenceRecord(np.ones((3, 2, 1, 1)), np.zeros((3, 2, 1, 1)))
    for K in (0.0, 1.0, 100.0):
        assert dc_inequality_check(rec, 0.3, K).satisfied


@pytest.mark.parametrize("rho,K,ok", [(0.5, 2.0, True), (0.5, 1.99, False), (0.2, 1.0, True)])
def test_single_residual_threshold(rho, K, ok):
    occ = np.zeros((1, 2, 1, 1))
    occ[0, :, 0, 0] = 1.0
    res = np.zeros((1, 2, 1, 1))
    res[0, 0, 0, 0] = rho
    check = dc_inequality_check(ResidualSequenceRecord(occ, res), 1.0, K)
    assert check.satisfied is ok
    assert check.rhs == K / 4


def test_required_K_is_tight(two_state_mdp):
    cls = random_class(4, two_state_mdp, (3, 3))
    rec = record_residuals(two_state_mdp, cls, [(0, 0), (1, 2), (2, 1)])
    K = required_K(rec, 0.5)
    if K > 0:
        assert dc_inequality_check(rec, 0.5, K * (1 + 1e-9)).satisfied
        assert not dc_inequality_check(rec, 0.5, K * (1 - 1e-6)).satisfied


def test_dc_check_rejects_nonpositive_mu():
    rec = ResidualSequenceRecord.empty(1, 1, 1)
    with pytest.raises(ValueError):
        dc_inequality_check(rec, 0.0, 1.0)


def test_adversarial_search_reports_worst_record(two_state_mdp):
    cls = random_class(5, two_state_mdp, (3, 3))
    K, worst = dc_adversarial_search(two_state_mdp, cls, 6, 0.5, num_sequences=8, seed=1)
    assert worst.length == 6
    assert K == pytest.approx(required_K(worst, 0.5), abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.1, 0.5, 1.0]))
def test_random_sequences_respect_tabular_bound(seed, mu):
    mdp = random_mdp(seed, X=2, A=2, H=2)
    cls = _closed(mdp, seed, extra=2)
    T = 12
    rng = np.random.default_rng(seed)
    seq = [tuple(int(rng.integers(n)) for n in cls.sizes) for _ in range(T)]
    rec = record_residuals(mdp, cls, seq)
    assert dc_inequality_check(rec, mu, dc_bound_linear(4, 2, T)).satisfied


# -- closed forms ------------------------------------------------------------------------


def test_linear_bound_values():
    assert dc_bound_linear(2, 3, 100) == pytest.approx(12 * (1 + math.log(600)), rel=1e-15)
    assert dc_bound_linear(2, 3, 100) == pytest.approx(88.763, abs=5e-4)
    assert dc_bound_linear(1, 1, 1) == pytest.approx(3.386, abs=5e-4)


def test_glm_bound_values():
    assert dc_bound_glm(3, 2, 40, 0.7, 0.7) == dc_bound_linear(3, 2, 40)
    assert dc_bound_glm(3, 2, 40, 0.5, 2.0) == pytest.approx(16 * dc_bound_linear(3, 2, 40), rel=1e-15)
    assert dc_bound_glm(2, 2, 50, 1.0, 2.0) == pytest.approx(201.55, abs=5e-3)
    with pytest.raises(ValueError):
        dc_bound_glm(2, 2, 50, 2.0, 1.0)


def test_be_bound_values():
    assert dc_bound_from_be(1, 1, 1, 1.0) == 5.0
    assert dc_bound_from_be(0, 4, 100, 0.3) == 0.0
    assert dc_bound_from_be(3, 2, 100, 0.5) == pytest.approx(45.63, abs=5e-3)


@settings(max_examples=50)
@given(st.integers(1, 20), st.integers(1, 10), st.integers(1, 10**4), st.floats(0.1, 10))
def test_glm_with_equal_constants_equals_linear(d, H, T, k):
    assert dc_bound_glm(d, H, T, k, k) == dc_bound_linear(d, H, T)


# -- helper inequality --------------------------------------------------------------------


def test_helper_examples():
    assert helper_sum_sqrt([3.7]) == 1.0
    assert helper_sum_sqrt([1.0, 0.5]) == pytest.approx(1.5 / math.sqrt(1.5), rel=1e-15)
    assert helper_sum_sqrt([1.0, 0.5]) <= math.sqrt(1 + math.log(2))
    n = 25
    xs = [1 / i for i in range(1, n + 1)]
    assert helper_sum_sqrt(xs) == pytest.approx(math.sqrt(sum(xs)), rel=1e-13)


def test_helper_rejects_nonpositive():
    with pytest.raises(NonPositiveEntry):
        helper_sum_sqrt([1.0, 0.0])
    with pytest.raises(NonPositiveEntry):
        helper_sum_sqrt([])


def test_helper_bound_on_random_sequences():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        xs = rng.exponential(size=n) ** rng.uniform(0.5, 4) + 1e-9
        assert helper_sum_sqrt(xs) <= math.sqrt(1 + math.log(n)) + 1e-12


# -- Eluder dimension ---------------------------------------------------------------------


def _independent(values, g_rows, prefix, nu, eps_p):
    return any(
        math.sqrt(sum(values[g, p] ** 2 for p in prefix)) <= eps_p and abs(values[g, nu]) > eps_p
        for g in g_rows
    )


def _oracle_de_dim(values, eps):
    """Literal definition: try every candidate eps' > eps and every ordered sequence."""
    n_g, m = values.shape
    points = {abs(v) for v in values.ravel()}
    for r in range(1, m + 1):
        for subset in itertools.combinations(range(m), r):
            for g in range(n_g):
                points.add(math.sqrt(sum(values[g, p] ** 2 for p in subset)))
    points = sorted(p for p in points if p > eps)
    trial = set(points)
    trial.update((a + b) / 2 for a, b in zip(points, points[1:]))
    trial.add(eps + 1e-9)
    if points:
        trial.add(points[-1] + 1.0)
    trial = [e for e in trial if e > eps]
    best = 0
    for eps_p in trial:
        for r in range(best + 1, m + 1):
            for seq in itertools.permutations(range(m), r):
                if all(_independent(values, range(n_g), seq[:k], seq[k], eps_p) for k in range(r)):
                    best = r
                    break
    return best


def test_zero_residuals_give_zero_dimension(two_state_mdp):
    Q, _ = optimal_values(two_state_mdp)
    cls = QFunctionClass.from_tables([Q[h][None] for h in range(2)])
    for mode in BeMode:
        assert bellman_eluder_dim(two_state_mdp, cls, 0.0, mode).value == 0


def test_single_measure_gives_one():
    assert distributional_eluder_dim(np.array([[0.5], [0.1]]), 0.2, BeMode.EXACT_TINY) == 1
    assert distributional_eluder_dim(np.array([[0.5], [0.1]]), 0.2, BeMode.GREEDY) == 1


@pytest.mark.parametrize("values,eps,expected", [
    ([[1.0, 0.0], [0.0, 1.0]], 0.5, 2),
    ([[1.0, 0.0], [0.0, 1.0]], 1.0, 0),
    ([[1.0, 1.0]], 0.5, 1),
    ([[1.0, 0.5], [0.5, 1.0]], 0.7, 2),
    ([[1.0, 0.9], [0.9, 1.0]], 0.95, 2),
    ([[1.0, 0.2], [1.0, 0.3]], 0.5, 1),
])
def test_two_measure_hand_cases(values, eps, expected):
    values = np.array(values)
    assert _oracle_de_dim(values, eps) == expected
    assert distributional_eluder_dim(values, eps, BeMode.EXACT_TINY) == expected


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 4), st.floats(0.0, 0.6))
def test_exact_search_matches_literal_definition(seed, n_g, m, eps):
    rng = np.random.default_rng(seed)
    values = np.round(rng.uniform(-1, 1, size=(n_g, m)), 2)
    exact = distributional_eluder_dim(values, eps, BeMode.EXACT_TINY)
    assert exact == _oracle_de_dim(values, eps)
    assert distributional_eluder_dim(values, eps, BeMode.GREEDY) <= exact


def test_exact_mode_cap():
    values = np.eye(9)
    with pytest.raises(CapExceeded):
        distributional_eluder_dim(values, 0.1, BeMode.EXACT_TINY)
    assert distributional_eluder_dim(values, 0.1, BeMode.GREEDY) == 9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_be_dimension_properties(seed):
    mdp = random_mdp(seed, X=2, A=2, H=2)
    cls = random_class(seed, mdp, (3, 2))
    fam = greedy_occupancy_family(mdp, cls)
    assert all(np.allclose(m.sum(axis=1), 1) for m in fam)
    previous = None
    for eps in (0.0, 0.05, 0.2, 0.5):
        exact = bellman_eluder_dim(mdp, cls, eps, BeMode.EXACT_TINY)
        greedy = bellman_eluder_dim(mdp, cls, eps, BeMode.GREEDY)
        assert greedy.value <= exact.value
        assert greedy.is_lower_bound and not exact.is_lower_bound
        if previous is not None:
            assert exact.value <= previous
        previous = exact.value


# -- report ---------------------------------------------------------------------------


def test_report_schema(two_state_mdp):
    cls = _closed(two_state_mdp, extra=2)
    rep = complexity_report(two_state_mdp, cls, 0.05, (0.1, 0.5, 1.0), 20, BeMode.EXACT_TINY)
    assert set(rep) == {"kappa", "kappa_eps", "dc_checks", "be_dim", "bounds"}
    assert [c["mu"] for c in rep["dc_checks"]] == [0.1, 0.5, 1.0]
    assert all(set(c) == {"mu", "K", "lhs", "rhs", "satisfied"} for c in rep["dc_checks"])
    assert all(c["satisfied"] for c in rep["dc_checks"])
    assert set(rep["be_dim"]) >= {"value", "mode"}
    assert rep["bounds"]["linear"] == dc_bound_linear(4, 2, 20)
