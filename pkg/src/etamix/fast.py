"""Compiled inner loops for the prediction sweeps.

These mirror ``learners.algorithm1_step`` and ``env.step`` operation for
operation; ``tests/test_fast.py`` checks them against the reference path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .env import MrpSpec

CHUNK = 4096


@njit(cache=True)
def _walk(cum, terminal, s0, u, out):
    """Fill ``out`` with a state sequence from ``s0``; returns ``(n_states_written, done)``."""
    n_states = cum.shape[1]
    out[0] = s0
    s = s0
    for k in range(u.shape[0]):
        row = cum[s]
        j = 0
        while j < n_states - 1 and row[j] <= u[k]:
            j += 1
        out[k + 1] = j
        s = j
        if terminal[j]:
            return k + 2, True
    return u.shape[0] + 1, False


def sample_states(spec: MrpSpec, rng: np.random.Generator, max_steps: int = 1_000_000) -> np.ndarray:
    """State sequence of one episode, start through terminal, drawn in uniform chunks."""
    cum = np.cumsum(spec.transition, axis=1)
    terminal = ~spec.nonterminal
    s0 = int(np.searchsorted(np.cumsum(spec.start), rng.random(), side="right"))
    pieces = []
    total = 0
    while total < max_steps:
        u = rng.random(min(CHUNK, max_steps - total))
        out = np.empty(u.size + 1, dtype=np.int64)
        n, done = _walk(cum, terminal, s0, u, out)
        pieces.append(out[: n] if not pieces else out[1:n])
        total += n - 1
        if done:
            return np.concatenate(pieces)
        s0 = int(out[n - 1])
    raise RuntimeError(f"episode did not terminate within {max_steps} steps")


@njit(cache=True)
def algorithm1_trajectory(phi, states, rewards, theta, xi, w, eta, gamma, a_theta, a_xi, a_w):
    """Apply the online eta-mixture update along ``states`` (length T+1) in place."""
    d = theta.shape[0]
    delta = np.empty(d)
    psi = np.empty(d)
    for t in range(rewards.shape[0]):
        f = phi[states[t]]
        fn = phi[states[t + 1]]
        r = rewards[t]
        # SF: delta = f + eta*g*xi.T fn - xi.T f ; xi += a_xi outer(f, delta)
        if a_xi != 0.0:  # a frozen head skips the O(d^2) pass
            for j in range(d):
                nxt = 0.0
                cur = 0.0
                for i in range(d):
                    if fn[i] != 0.0:
                        nxt += xi[i, j] * fn[i]
                    if f[i] != 0.0:
                        cur += xi[i, j] * f[i]
                delta[j] = f[j] + eta * gamma * nxt - cur
            for i in range(d):
                if f[i] != 0.0:
                    for j in range(d):
                        xi[i, j] += a_xi * f[i] * delta[j]
        # reward
        pred = 0.0
        for i in range(d):
            pred += f[i] * w[i]
        err = a_w * (r - pred)
        for i in range(d):
            w[i] += err * f[i]
        # value, with the updated xi and w
        for j in range(d):
            acc = 0.0
            for i in range(d):
                if fn[i] != 0.0:
                    acc += xi[i, j] * fn[i]
            psi[j] = acc
        boot = 0.0
        for j in range(d):
            boot += psi[j] * ((1.0 - eta) * theta[j] + eta * w[j])
        v = 0.0
        for i in range(d):
            v += f[i] * theta[i]
        err = a_theta * (r + gamma * boot - v)
        for i in range(d):
            theta[i] += err * f[i]
    for i in range(d):
        if not np.isfinite(theta[i]) or not np.isfinite(w[i]):
            return False
        for j in range(d):
            if not np.isfinite(xi[i, j]):
                return False
    return True


def transition_rewards(spec: MrpSpec, states: np.ndarray) -> np.ndarray:
    return spec.reward[states[:-1], states[1:]].astype(float)
