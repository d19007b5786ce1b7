import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from etamix.control import (
    ControlConfig,
    QLearnerState,
    ReplayBuffer,
    epsilon_greedy,
    eta_q_target,
    eta_q_target_factored,
    fitted_q_loss_value,
    fitted_q_losses,
    greedy_policy,
    q_learning_step,
    run_control,
)
from etamix.env import Transition, build_gridworld, sample_start, step, value_iteration
from etamix.oracle import random_instance, reward_regression_solution, sf_fixed_point, tabular_features, td_fixed_point

seeds = st.integers(0, 2**32 - 1)


def _random_learner(rng, d=4, n_actions=3, eta=0.5, gamma=0.9):
    s = QLearnerState.initial(d, n_actions, eta, gamma, 0.1)
    s.theta = rng.normal(size=(d, n_actions))
    s.xi = np.eye(d) + 0.3 * rng.normal(size=(d, d))
    s.w = rng.normal(size=d)
    return s


def _random_batch(rng, n_states, n_actions, n=16):
    return [
        Transition(int(rng.integers(n_states)), int(rng.integers(n_actions)), float(rng.normal()),
                   int(rng.integers(n_states)), False)
        for _ in range(n)
    ]


@given(seeds, st.floats(0, 1))
def test_eta_q_target_forms_agree(seed, eta):
    rng = np.random.default_rng(seed)
    s = _random_learner(rng, eta=eta)
    phi_next = rng.normal(size=4)
    assert eta_q_target(phi_next, s) == pytest.approx(eta_q_target_factored(phi_next, s), abs=1e-12)


@given(seeds, st.floats(1e-3, 1e3))
def test_greedy_policy_invariant_to_positive_scaling(seed, c):
    rng = np.random.default_rng(seed)
    s = _random_learner(rng)
    phi = rng.normal(size=(6, 4))
    before = greedy_policy(s, phi)
    s.theta = c * s.theta
    np.testing.assert_array_equal(greedy_policy(s, phi), before)


def test_argmax_ties_break_to_lowest_index(rng):
    assert epsilon_greedy(np.array([1.0, 3.0, 3.0, 0.0]), 0.0, rng) == 1
    assert epsilon_greedy(np.zeros(4), 0.0, rng) == 0
    with pytest.raises(ValueError):
        epsilon_greedy(np.zeros(4), 1.5, rng)


def test_epsilon_greedy_explores_uniformly(rng):
    picks = np.bincount([epsilon_greedy(np.array([0.0, 1.0, 0.0]), 1.0, rng) for _ in range(6000)], minlength=3)
    assert np.all(np.abs(picks / 6000 - 1 / 3) < 0.03)


@given(st.integers(0, 50_000), st.floats(0, 1), st.floats(0, 1), st.integers(0, 20_000))
def test_epsilon_schedule_is_linear_and_bounded(t, e0, e1, anneal):
    s = QLearnerState.initial(2, 2, 0.5, 0.9, 0.1, epsilon_initial=e0, epsilon_final=e1, anneal_steps=anneal)
    eps = s.epsilon(t)
    assert min(e0, e1) - 1e-12 <= eps <= max(e0, e1) + 1e-12
    if anneal == 0 or t >= anneal:
        assert eps == e1
    else:
        assert eps == pytest.approx(e0 + t / anneal * (e1 - e0))


def test_q_state_validation():
    with pytest.raises(ValueError):
        QLearnerState.initial(3, 2, 0.5, 1.0, 0.1)
    with pytest.raises(ValueError):
        QLearnerState.initial(3, 2, -0.1, 0.9, 0.1)
    with pytest.raises(ValueError):
        QLearnerState.initial(3, 2, 0.5, 0.9, 0.1, epsilon_final=1.2)


@given(st.lists(st.integers(0, 1000), max_size=60), st.integers(1, 10), seeds)
def test_replay_buffer_is_bounded_fifo(items, capacity, seed):
    buf = ReplayBuffer(capacity)
    for x in items:
        buf.push(x)
        assert len(buf) <= capacity
    assert buf.ordered() == items[-capacity:] if items else buf.ordered() == []
    if items:
        sample = buf.sample(25, np.random.default_rng(seed))
        assert len(sample) == 25 and set(sample) <= set(items[-capacity:])


def test_replay_buffer_sampling_is_uniform_with_replacement():
    buf = ReplayBuffer(4)
    for x in range(4):
        buf.push(x)
    counts = np.bincount(buf.sample(8000, np.random.default_rng(0)), minlength=4)
    assert np.all(np.abs(counts / 8000 - 0.25) < 0.02)
    with pytest.raises(ValueError):
        ReplayBuffer(0)
    with pytest.raises(ValueError):
        ReplayBuffer(2).sample(1, np.random.default_rng(0))


@given(seeds)
def test_loss_breakdown_components(seed):
    rng = np.random.default_rng(seed)
    s = _random_learner(rng)
    phi = rng.normal(size=(6, 4))
    out = fitted_q_losses(s, _random_batch(rng, 6, 3), phi)
    assert min(out.l_sf, out.l_r, out.l_q) >= 0
    assert out.total == out.l_sf + out.l_r + out.l_q


def test_zero_rewards_and_parameters_give_zero_value_losses():
    s = QLearnerState.initial(4, 2, 0.5, 0.9, 0.1)
    s.xi = np.zeros((4, 4))
    batch = [Transition(i % 4, i % 2, 0.0, (i + 1) % 4, False) for i in range(8)]
    out = fitted_q_losses(s, batch, np.eye(4))
    assert out.l_r == 0.0 and out.l_q == 0.0
    with pytest.raises(ValueError):
        fitted_q_losses(s, [], np.eye(4))


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def finite_difference_gradients(state, batch, phi, h=1e-5):
    frozen = (state.theta.copy(), state.xi.copy(), state.w.copy())
    params = [state.theta.copy(), state.xi.copy(), state.w.copy()]
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1, -1):
                q = [x.copy() for x in params]
                q[k][idx] += sign * h
                vals.append(fitted_q_loss_value(*q, frozen, batch, phi, state.eta, state.gamma))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        grads.append(g)
    return grads


@given(seeds)
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    s = _random_learner(rng, eta=float(rng.random()))
    phi = rng.normal(size=(6, 4))
    batch = _random_batch(rng, 6, 3)
    out = fitted_q_losses(s, batch, phi)
    fd = finite_difference_gradients(s, batch, phi)
    for analytic, numeric in zip((out.grad_theta, out.grad_xi, out.grad_w), fd):
        assert _relative_error(analytic, numeric) < 1e-6


@pytest.mark.parametrize("eta", [0.0, 0.4, 1.0])
def test_gradients_vanish_at_oracle_fixed_points(eta):
    # a one-action MDP is an MRP; weight each (s, s') pair by d(s) P(s, s')
    rng = np.random.default_rng(8)
    phi, d, P, _ = random_instance(rng, 5, 3)
    rewards = rng.normal(size=(5, 5))
    R_bar = (P * rewards).sum(axis=1)
    gamma = 0.9
    s = QLearnerState.initial(3, 1, eta, gamma, 0.1)
    s.xi = sf_fixed_point(phi, d, P, gamma, eta)
    s.w = reward_regression_solution(phi, d, R_bar)
    s.theta = td_fixed_point(phi, d, P, R_bar, gamma)[:, None]
    batch = [Transition(i, 0, float(rewards[i, j]), j, False) for i in range(5) for j in range(5)]
    weights = np.array([d[i] * P[i, j] for i in range(5) for j in range(5)])
    out = fitted_q_losses(s, batch, phi, weights=weights)
    for g in (out.grad_theta, out.grad_xi, out.grad_w):
        assert np.linalg.norm(g) < 1e-8


def test_q_step_only_touches_taken_action():
    s = QLearnerState.initial(3, 4, 0.5, 0.9, 0.5)
    q_learning_step(s, Transition(0, 2, 1.0, 1, False), np.eye(3))
    assert np.count_nonzero(s.theta) == 1 and s.theta[0, 2] == 0.5
    with pytest.raises(ValueError):
        q_learning_step(s, Transition(0, None, 1.0, 1, False), np.eye(3))


def test_zero_rates_match_random_policy_returns():
    env = build_gridworld(3, 3, (2, 2))
    phi = tabular_features(env)
    cfg = ControlConfig(eta=0.5, alpha=0.0, steps=3000, epsilon_initial=1.0, epsilon_final=1.0, max_episode_steps=50)
    state, rec = run_control(env, cfg, np.random.default_rng(4), phi)
    assert not state.theta.any()
    # replay the same draws with an explicit uniform-random policy
    rng = np.random.default_rng(4)
    returns, s, ret, n = [], sample_start(env, rng), 0.0, 0
    for _ in range(3000):
        rng.random()
        tr = step(env, s, int(rng.integers(4)), rng)
        ret, n = ret + tr.r, n + 1
        if tr.done or n >= 50:
            returns.append(ret)
            s, ret, n = sample_start(env, rng), 0.0, 0
        else:
            s = tr.s_next
    assert rec.series == returns


def test_eta_zero_ignores_successor_and_reward_heads():
    env = build_gridworld(4, 4, (3, 3))
    phi = tabular_features(env)
    logs = []
    for a_sf in (0.1, 0.0):
        log = []
        cfg = ControlConfig(eta=0.0, alpha=0.1, alpha_sf=a_sf, alpha_r=a_sf, steps=2000)
        run_control(env, cfg, np.random.default_rng(1), phi, theta_log=log)
        logs.append(log)
    for a, b in zip(*logs):
        np.testing.assert_array_equal(a, b)


def test_fitted_mode_learns_and_stays_finite():
    env = build_gridworld(3, 3, (2, 2))
    phi = tabular_features(env)
    cfg = ControlConfig(eta=0.5, alpha=0.5, steps=3000, fitted_q=True, buffer=500, batch=16, anneal_steps=1000)
    state, rec = run_control(env, cfg, np.random.default_rng(0), phi)
    assert np.isfinite(state.theta).all() and len(rec.series) > 0
    _, q_star = value_iteration(env, cfg.gamma)
    assert np.argmax(phi.phi[0] @ state.theta) in np.flatnonzero(q_star[0] >= q_star[0].max() - 1e-9)


def test_eta_zero_q_learning_converges_to_optimal_values():
    env = build_gridworld(5, 5, (4, 4), start=None)  # exploring starts
    phi = tabular_features(env)
    _, q_star = value_iteration(env, 0.99)
    cfg = ControlConfig(eta=0.0, gamma=0.99, alpha=0.5, alpha_decay_steps=20_000, steps=200_000,
                        epsilon_initial=0.2, epsilon_final=0.2)
    state, _ = run_control(env, cfg, np.random.default_rng(0), phi)
    mask = env.nonterminal
    assert np.max(np.abs((phi.phi @ state.theta)[mask] - q_star[mask])) < 1e-2
