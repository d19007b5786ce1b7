import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from etamix import fast
from etamix.env import build_deterministic_chain, build_random_walk, run_episode
from etamix.learners import LearnerState, apply_episode
from etamix.oracle import random_instance, tabular_features


@pytest.mark.parametrize("spec", [build_random_walk(19), build_deterministic_chain(16)])
@pytest.mark.parametrize("eta", [0.0, 0.4, 1.0])
def test_kernel_matches_reference_updates(spec, eta):
    rng = np.random.default_rng(3)
    phi = np.ascontiguousarray(tabular_features(spec).phi)
    d = phi.shape[1]
    ref = LearnerState.initial(d, eta, 0.99, 0.3, alpha_xi=0.2, alpha_w=0.1)
    theta, xi, w = np.zeros(d), np.eye(d), np.zeros(d)
    for _ in range(30):
        ep = run_episode(spec, rng)
        apply_episode(ref, ep, phi)
        states = np.array(ep.states)
        assert fast.algorithm1_trajectory(phi, states, np.array(ep.rewards), theta, xi, w, eta, 0.99, 0.3, 0.2, 0.1)
    np.testing.assert_allclose(theta, ref.theta, atol=1e-12, rtol=0)
    np.testing.assert_allclose(xi, ref.xi, atol=1e-12, rtol=0)
    np.testing.assert_allclose(w, ref.w, atol=1e-12, rtol=0)


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_kernel_matches_reference_with_dense_features(seed, eta):
    rng = np.random.default_rng(seed)
    spec = build_random_walk(5)
    phi, *_ = random_instance(rng, 7, 3)
    phi[[0, 6]] = 0.0
    ref = LearnerState(rng.normal(size=3), np.eye(3) + 0.1 * rng.normal(size=(3, 3)), rng.normal(size=3),
                       eta, 0.9, 0.05, 0.04, 0.03)
    theta, xi, w = ref.theta.copy(), ref.xi.copy(), ref.w.copy()
    ep = run_episode(spec, rng)
    apply_episode(ref, ep, phi)
    fast.algorithm1_trajectory(phi, np.array(ep.states), np.array(ep.rewards), theta, xi, w, eta, 0.9, 0.05, 0.04, 0.03)
    np.testing.assert_allclose(theta, ref.theta, atol=1e-12, rtol=0)
    np.testing.assert_allclose(xi, ref.xi, atol=1e-12, rtol=0)


def test_kernel_reports_overflow():
    spec = build_random_walk(5)
    phi = np.ascontiguousarray(tabular_features(spec).phi) * 1e200
    states = np.array([3, 4, 5, 6])
    theta, xi, w = np.zeros(5), np.eye(5), np.zeros(5)
    ok = fast.algorithm1_trajectory(phi, states, fast.transition_rewards(spec, states), theta, xi, w, 0.5, 1.0,
                                    1.0, 1.0, 1.0)
    assert not ok


def test_sampled_episodes_are_valid_walks(rng):
    spec = build_random_walk(19)
    for _ in range(200):
        s = fast.sample_states(spec, rng)
        assert s[0] == 10 and s[-1] in (0, 20)
        assert np.all(np.abs(np.diff(s)) == 1)
        assert not np.isin(s[:-1], [0, 20]).any()


def test_long_episodes_cross_chunk_boundaries():
    # a 201-state walk has mean episode length ~1e4, past the 4096-draw chunk
    spec = build_random_walk(201)
    s = fast.sample_states(spec, np.random.default_rng(0))
    assert len(s) > fast.CHUNK
    assert np.all(np.abs(np.diff(s)) == 1)


def test_chain_episode_is_deterministic(rng):
    s = fast.sample_states(build_deterministic_chain(16), rng)
    np.testing.assert_array_equal(s, np.arange(17))
    assert fast.transition_rewards(build_deterministic_chain(16), s).tolist() == [0.0] * 15 + [1.0]


def test_sampler_respects_step_budget(rng):
    with pytest.raises(RuntimeError):
        fast.sample_states(build_random_walk(201), rng, max_steps=10)
