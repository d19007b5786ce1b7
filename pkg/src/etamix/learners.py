"""Online linear prediction with the eta-return mixture target.

Parameter conventions (``d`` = feature dimension):

* value ``v(s) = phi(s) @ theta``
* successor features ``psi(s) = xi.T @ phi(s)``, so ``xi[i, j]`` is the weight of
  input feature ``i`` on output feature ``j``
* instantaneous reward ``r(s) = phi(s) @ w``

The update functions modify the state in place and return it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .env import ContractError, Episode, MrpSpec, Transition, sample_start, step


class NumericOverflowError(FloatingPointError):
    pass


@dataclass
class LearnerState:
    theta: np.ndarray
    xi: np.ndarray
    w: np.ndarray
    eta: float
    gamma: float
    alpha_theta: float
    alpha_xi: float
    alpha_w: float

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if min(self.alpha_theta, self.alpha_xi, self.alpha_w) < 0:
            raise ValueError("learning rates must be non-negative")
        d = self.theta.shape[0]
        if self.xi.shape != (d, d) or self.w.shape != (d,):
            raise ValueError("theta, xi and w dimensions disagree")

    @classmethod
    def initial(
        cls,
        d: int,
        eta: float,
        gamma: float,
        alpha: float,
        alpha_xi: float | None = None,
        alpha_w: float | None = None,
    ) -> "LearnerState":
        """theta = 0, w = 0, xi = I. SF and reward rates default to the value rate."""
        return cls(
            theta=np.zeros(d),
            xi=np.eye(d),
            w=np.zeros(d),
            eta=eta,
            gamma=gamma,
            alpha_theta=alpha,
            alpha_xi=alpha if alpha_xi is None else alpha_xi,
            alpha_w=alpha if alpha_w is None else alpha_w,
        )

    def copy(self) -> "LearnerState":
        return LearnerState(
            self.theta.copy(), self.xi.copy(), self.w.copy(), self.eta, self.gamma,
            self.alpha_theta, self.alpha_xi, self.alpha_w,
        )

    def psi(self, phi_s: np.ndarray) -> np.ndarray:
        return self.xi.T @ phi_s

    def eta_value(self, phi_s: np.ndarray) -> float:
        """Mixture value ``psi(s) @ ((1 - eta) theta + eta w)``."""
        return float(self.psi(phi_s) @ ((1.0 - self.eta) * self.theta + self.eta * self.w))


@dataclass(frozen=True)
class EtaTarget:
    value: float
    r: float
    sf_vector: np.ndarray
    mixture_weights: np.ndarray
    gamma: float = field(default=1.0)


def _rows(phi, s: int) -> np.ndarray:
    return np.asarray(phi.phi if hasattr(phi, "phi") else phi)[s]


def _check_finite(a: np.ndarray) -> None:
    # a sum is finite iff every entry is (an overflowing sum is itself a failure)
    if not math.isfinite(a.sum()):
        raise NumericOverflowError("parameters became non-finite")


def td0_target(r: float, phi_next: np.ndarray, theta: np.ndarray, gamma: float) -> float:
    return float(r + gamma * (phi_next @ theta))


def eta_return_target(state: LearnerState, r: float, phi_next: np.ndarray) -> EtaTarget:
    psi = state.xi.T @ phi_next
    mix = (1.0 - state.eta) * state.theta + state.eta * state.w
    return EtaTarget(float(r + state.gamma * (psi @ mix)), float(r), psi, mix, state.gamma)


def td0_value_update(
    state: LearnerState,
    transition: Transition,
    phi,
    target: Literal["td0", "eta"] = "td0",
) -> LearnerState:
    """theta += alpha (U - phi_t @ theta) phi_t, with U the TD(0) or eta-mixture target."""
    f, fn = _rows(phi, transition.s), _rows(phi, transition.s_next)
    if target == "td0":
        u = td0_target(transition.r, fn, state.theta, state.gamma)
    elif target == "eta":
        u = eta_return_target(state, transition.r, fn).value
    else:
        raise ValueError(f"unknown target {target!r}")
    state.theta += state.alpha_theta * (u - f @ state.theta) * f
    _check_finite(state.theta)
    return state


def sf_td_update(state: LearnerState, transition: Transition, phi, alpha: float | None = None) -> LearnerState:
    """TD(0) on the eta*gamma-discounted successor features. ``alpha`` overrides ``alpha_xi``."""
    f, fn = _rows(phi, transition.s), _rows(phi, transition.s_next)
    delta = f + state.eta * state.gamma * (state.xi.T @ fn) - state.xi.T @ f
    # psi = xi.T phi, so the gradient of psi(s) w.r.t. xi routes delta into phi(s)'s rows
    state.xi += (state.alpha_xi if alpha is None else alpha) * np.outer(f, delta)
    _check_finite(state.xi)
    return state


def reward_update(state: LearnerState, transition: Transition, phi, alpha: float | None = None) -> LearnerState:
    f = _rows(phi, transition.s)
    alpha = state.alpha_w if alpha is None else alpha
    state.w += alpha * (transition.r - f @ state.w) * f
    _check_finite(state.w)
    return state


def algorithm1_step(state: LearnerState, transition: Transition, phi) -> LearnerState:
    """One online step: SF update, reward update, then the value update.

    The value target reads the freshly updated ``xi`` and ``w`` but the old ``theta``.
    """
    sf_td_update(state, transition, phi)
    reward_update(state, transition, phi)
    return td0_value_update(state, transition, phi, target="eta")


def algorithm1_episode(
    state: LearnerState,
    env: MrpSpec,
    rng: np.random.Generator,
    phi,
    max_steps: int = 1_000_000,
) -> tuple[LearnerState, Episode]:
    s = sample_start(env, rng)
    episode = Episode()
    for _ in range(max_steps):
        tr = step(env, s, None, rng)
        algorithm1_step(state, tr, phi)
        episode.transitions.append(tr)
        if tr.done:
            return state, episode
        s = tr.s_next
    raise ContractError(f"episode did not terminate within {max_steps} steps")


def td0_episode(
    state: LearnerState,
    env: MrpSpec,
    rng: np.random.Generator,
    phi,
    max_steps: int = 1_000_000,
) -> tuple[LearnerState, Episode]:
    """Plain TD(0) on the value weights only (baseline)."""
    s = sample_start(env, rng)
    episode = Episode()
    for _ in range(max_steps):
        tr = step(env, s, None, rng)
        td0_value_update(state, tr, phi, target="td0")
        episode.transitions.append(tr)
        if tr.done:
            return state, episode
        s = tr.s_next
    raise ContractError(f"episode did not terminate within {max_steps} steps")


def apply_episode(state: LearnerState, episode: Episode, phi) -> LearnerState:
    """Replay a recorded episode through the online update, step by step."""
    for tr in episode:
        algorithm1_step(state, tr, phi)
    return state


def lambda_return_two_forms(
    episode: Episode, values, lam: float, gamma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Lambda-returns for every step of a finished episode, computed two ways.

    ``form_a`` is the geometric average of n-step returns, with the weight of
    all n-step returns reaching past termination collapsed onto the full
    return. ``form_b`` is the recursive value-plus-reward sum
    ``R_{t+1} + g sum_n (lam g)^(n-1) [(1-lam) V_{t+n} + lam R_{t+n+1}]``.
    The value of the final (terminal) state is taken as zero.
    """
    if not episode.terminated:
        raise ContractError("lambda-returns need a terminated episode")
    r = np.asarray(episode.rewards, dtype=float)
    T = r.size
    values = np.asarray(values, dtype=float)
    v = np.append(values[np.asarray(episode.states[:-1])], 0.0)  # V(S_0..S_T), V(S_T) = 0

    # rp[t + k] / vp[t + k] for k = 0..T, zero past the episode end
    rp = np.concatenate([r, np.zeros(T + 1)])
    vp = np.concatenate([v, np.zeros(T + 1)])
    windows = np.lib.stride_tricks.sliding_window_view
    R_win = windows(rp, T + 1)[:T]  # R_win[t, k] = R_{t+k+1}
    V_win = windows(vp, T + 1)[:T]  # V_win[t, k] = V(S_{t+k})
    k = np.arange(T + 1)

    # form a: n-step returns G[t, n-1] for n = 1..T
    n = np.arange(1, T + 1)
    disc_r = np.cumsum(R_win[:, :T] * gamma ** k[:T], axis=1)
    G = disc_r + gamma**n * V_win[:, 1 : T + 1]
    horizon = (T - np.arange(T))[:, None]  # steps to termination from t
    weights = np.where(n < horizon, (1.0 - lam) * lam ** (n - 1.0), 0.0)
    weights = np.where(n == horizon, lam ** (horizon - 1.0), weights)
    form_a = np.sum(weights * G, axis=1)

    # form b
    inner = (1.0 - lam) * V_win[:, 1 : T + 1] + lam * R_win[:, 1 : T + 1]
    form_b = r + gamma * np.sum((lam * gamma) ** (n - 1.0) * inner, axis=1)
    return form_a, form_b
