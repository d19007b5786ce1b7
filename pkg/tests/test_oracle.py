import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etamix import fast
from etamix.env import build_deterministic_chain, build_random_walk, true_values
from etamix.oracle import (
    DivergenceError,
    FeatureMatrix,
    SingularSystemError,
    UndefinedRankError,
    effective_rank,
    lemma_identity_residual,
    on_policy_distribution,
    problem_from_spec,
    proposition_check,
    random_instance,
    reward_regression_solution,
    sf_fixed_point,
    tabular_features,
    td_fixed_point,
)

seeds = st.integers(0, 2**32 - 1)


@st.composite
def instances(draw):
    rng = np.random.default_rng(draw(seeds))
    n = draw(st.integers(2, 8))
    d = draw(st.integers(1, n))
    gamma = draw(st.floats(0.0, 0.99))
    return random_instance(rng, n, d), gamma


@given(instances())
def test_td_fixed_point_zeroes_projected_bellman_residual(inst):
    (phi, d, P, R), gamma = inst
    theta = td_fixed_point(phi, d, P, R, gamma)
    residual = phi.T @ (d * (R + gamma * P @ phi @ theta - phi @ theta))
    assert np.max(np.abs(residual)) < 1e-10


@given(instances(), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
def test_sf_times_reward_weights_is_short_horizon_td(inst, eta):
    (phi, d, P, R), gamma = inst
    lhs = sf_fixed_point(phi, d, P, gamma, eta) @ reward_regression_solution(phi, d, R)
    rhs = td_fixed_point(phi, d, P, R, eta * gamma)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10, rtol=0)


@given(instances(), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))
def test_mixture_identity_holds(inst, eta):
    (phi, d, P, R), gamma = inst
    assert 0.0 <= lemma_identity_residual(phi, d, P, R, gamma, eta) < 1e-10


@given(instances(), st.floats(0.0, 1.0))
def test_td_fixed_point_is_fixed_under_expected_update(inst, eta):
    (phi, d, P, R), gamma = inst
    theta_td = td_fixed_point(phi, d, P, R, gamma)
    rep = proposition_check(phi, d, P, R, gamma, eta, theta0=theta_td, n_iters=50)
    # rounding drift per iteration scales with the conditioning of the TD system
    A = phi.T @ (d[:, None] * (phi - gamma * P @ phi))
    tol = max(1e-12, 50 * np.linalg.cond(A) * np.finfo(float).eps * np.abs(theta_td).max())
    assert max(rep.iteration_trace) < tol


@pytest.mark.parametrize("env", [build_random_walk(19), build_deterministic_chain(16)])
@pytest.mark.parametrize("eta", [0.0, 0.3, 0.7, 1.0])
def test_td_fixed_point_is_fixed_on_chains(env, eta):
    phi, d, P, R = problem_from_spec(env, None, tabular_features(env))
    theta_td = td_fixed_point(phi, d, P, R, 0.9)
    rep = proposition_check(phi, d, P, R, 0.9, eta, theta0=theta_td, n_iters=200)
    assert max(rep.iteration_trace) <= 1e-12


def test_eta_zero_iteration_is_expected_td0():
    phi, d, P, R = random_instance(np.random.default_rng(3), 6, 4)
    gamma = 0.9
    G = phi.T @ (d[:, None] * phi)
    theta = np.zeros(4)
    trace = []
    for _ in range(30):
        # theta <- G^-1 Phi'D (R + gamma P Phi theta), the expected TD(0) projection step
        theta = np.linalg.solve(G, phi.T @ (d * (R + gamma * P @ phi @ theta)))
        trace.append(np.max(np.abs(theta - td_fixed_point(phi, d, P, R, gamma))))
    rep = proposition_check(phi, d, P, R, gamma, 0.0, n_iters=30)
    np.testing.assert_allclose(rep.iteration_trace[1:], trace, atol=1e-12)


@pytest.mark.parametrize("eta", [0.0, 0.3, 0.7, 1.0])
def test_expected_iteration_contracts_on_random_walk(eta):
    spec = build_random_walk(19)
    phi, d, P, R = problem_from_spec(spec)
    rep = proposition_check(phi, d, P, R, 1.0, eta, n_iters=10_000, tol=1e-9)
    assert rep.final_distance < 1e-8
    np.testing.assert_allclose(phi @ rep.theta_td, true_values(spec, None, 1.0), atol=1e-10)
    tail = np.array(rep.iteration_trace[10:])
    assert np.all(np.diff(tail) <= 1e-15)


def test_divergent_iteration_raises():
    phi = np.array([[1.0], [2.0]])
    P = np.array([[0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(DivergenceError) as info:
        proposition_check(phi, np.array([0.9, 0.1]), P, np.array([1.0, 0.0]), 0.99, 0.0, n_iters=1000)
    assert len(info.value.trace) > 1


def test_singular_gram_raises():
    phi = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    P = np.eye(3)
    with pytest.raises(SingularSystemError):
        reward_regression_solution(phi, np.array([1.0, 0.0, 0.0]), np.zeros(3))
    with pytest.raises(SingularSystemError):
        td_fixed_point(phi, np.array([0.5, 0.5, 0.0]), P, np.zeros(3), 1.0)


def test_diagonal_and_vector_weights_agree():
    phi, d, P, R = random_instance(np.random.default_rng(0), 5, 3)
    np.testing.assert_array_equal(td_fixed_point(phi, d, P, R, 0.9), td_fixed_point(phi, np.diag(d), P, R, 0.9))


def test_feature_matrix_checks():
    with pytest.raises(ValueError):
        FeatureMatrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    tab = tabular_features(build_random_walk(5))
    assert tab.d == 5 and tab.n_states == 7
    assert not tab.phi[0].any() and not tab.phi[6].any()
    tab.check_terminals({0, 6})
    with pytest.raises(ValueError):
        FeatureMatrix(np.ones((3, 1))).check_terminals({0})


@pytest.mark.parametrize("spec", [build_random_walk(19), build_deterministic_chain(16)])
def test_on_policy_distribution_is_a_distribution(spec):
    d = on_policy_distribution(spec).d_pi
    assert np.all(d >= 0) and abs(d.sum() - 1.0) <= 1e-12
    assert all(d[t] == 0.0 for t in spec.terminal)


def test_chain_distribution_is_uniform():
    d = on_policy_distribution(build_deterministic_chain(16)).d_pi
    np.testing.assert_allclose(d[:16], 1 / 16, atol=1e-15)


@pytest.mark.parametrize("spec", [build_random_walk(19), build_deterministic_chain(16)])
def test_on_policy_distribution_matches_visit_frequencies(spec):
    rng = np.random.default_rng(1)
    n_ep = 100_000
    counts = np.zeros((n_ep, spec.n_states))
    for k in range(n_ep):
        counts[k] = np.bincount(fast.sample_states(spec, rng)[:-1], minlength=spec.n_states)
    d = on_policy_distribution(spec).d_pi
    lengths = counts.sum(axis=1)
    freq = counts.sum(axis=0) / lengths.sum()
    # ratio estimator: delta-method standard error of sum(c_s) / sum(L)
    resid = counts - freq[None, :] * lengths[:, None]
    se = np.sqrt((resid**2).sum(axis=0)) / lengths.sum()
    mask = spec.nonterminal
    assert np.all(np.abs(freq - d)[mask] <= 3 * se[mask] + 1e-15)


def test_effective_rank_examples():
    assert effective_rank(np.eye(128)) == 127
    u = np.arange(1.0, 6.0)
    assert effective_rank(np.outer(u, u[::-1])) == 1
    assert effective_rank(np.diag([10.0, 1.0, 0.01, 0.001]), 0.01) == 2
    with pytest.raises(UndefinedRankError):
        effective_rank(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        effective_rank(np.eye(3), 0.0)


@given(seeds, st.floats(1e-3, 1e3))
def test_effective_rank_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(rng.integers(2, 20), rng.integers(2, 20))) * rng.exponential(size=rng.integers(2, 20)).mean()
    assert effective_rank(c * m) == effective_rank(m)


@given(seeds, st.floats(0.001, 0.5), st.floats(0.001, 0.5))
def test_effective_rank_monotone_in_delta(seed, d1, d2):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(12, 8)) @ np.diag(rng.exponential(size=8))
    lo, hi = sorted((d1, d2))
    assert effective_rank(m, hi) <= effective_rank(m, lo)


def test_report_text_lists_key_quantities():
    phi, d, P, R = problem_from_spec(build_random_walk(5))
    text = proposition_check(phi, d, P, R, 1.0, 0.5, n_iters=10).to_text()
    for key in ("eta", "identity residual", "theta_TD", "w_hat"):
        assert key in text
