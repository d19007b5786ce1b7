"""Q-learning with the eta-mixture bootstrap, online or from a replay buffer.

Action values are linear per action, ``q(s, a) = phi(s) @ theta[:, a]``. The
successor features and reward head are state based and shared across actions.
In the fitted variant the encoder is fixed, so only the heads receive gradients.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import MdpSpec, Transition, sample_start, step
from .learners import NumericOverflowError, reward_update, sf_td_update
from .records import RunRecord


@dataclass
class QLearnerState:
    theta: np.ndarray  # (d, A)
    xi: np.ndarray  # (d, d)
    w: np.ndarray  # (d,)
    eta: float
    gamma: float
    alpha_theta: float
    alpha_xi: float
    alpha_w: float
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.1
    anneal_steps: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        for eps in (self.epsilon_initial, self.epsilon_final):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"epsilon must be in [0, 1], got {eps}")
        d = self.theta.shape[0]
        if self.xi.shape != (d, d) or self.w.shape != (d,):
            raise ValueError("theta, xi and w dimensions disagree")

    @classmethod
    def initial(cls, d: int, n_actions: int, eta: float, gamma: float, alpha: float, **kw) -> "QLearnerState":
        kw.setdefault("alpha_xi", alpha)
        kw.setdefault("alpha_w", alpha)
        return cls(np.zeros((d, n_actions)), np.eye(d), np.zeros(d), eta, gamma, alpha, **kw)

    def epsilon(self, t: int) -> float:
        """Linear anneal from initial to final over ``anneal_steps`` steps."""
        if t >= self.anneal_steps:
            return self.epsilon_final
        frac = t / self.anneal_steps
        return self.epsilon_initial + frac * (self.epsilon_final - self.epsilon_initial)

    def q_values(self, phi_s: np.ndarray) -> np.ndarray:
        return phi_s @ self.theta


@dataclass
class LossBreakdown:
    l_sf: float
    l_r: float
    l_q: float
    grad_theta: np.ndarray | None = None
    grad_xi: np.ndarray | None = None
    grad_w: np.ndarray | None = None

    @property
    def total(self) -> float:
        return self.l_sf + self.l_r + self.l_q


def eta_q_target(phi_next: np.ndarray, state: QLearnerState) -> float:
    """``max_a' [(1 - eta) psi @ theta_a' + eta psi @ w]`` with ``psi = xi.T phi_next``."""
    psi = state.xi.T @ phi_next
    return float(np.max((1.0 - state.eta) * (psi @ state.theta) + state.eta * (psi @ state.w)))


def eta_q_target_factored(phi_next: np.ndarray, state: QLearnerState) -> float:
    """Same quantity with the action-independent reward term pulled out of the max."""
    psi = state.xi.T @ phi_next
    return float((1.0 - state.eta) * np.max(psi @ state.theta) + state.eta * (psi @ state.w))


def epsilon_greedy(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability epsilon, else argmax (lowest index wins ties).

    Consumes exactly one uniform, plus one integer draw when exploring.
    """
    q_row = np.asarray(q_row)
    if q_row.size == 0:
        raise ValueError("empty action set")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(q_row.size))
    return int(np.argmax(q_row))


def q_learning_step(state: QLearnerState, transition: Transition, phi, alpha_scale: float = 1.0) -> QLearnerState:
    """Online step: SF update, reward update, then the Q update of the taken action's column.

    ``alpha_scale`` multiplies all three learning rates for this step.
    """
    if transition.a is None:
        raise ValueError("Q-learning needs the taken action")
    phi = getattr(phi, "phi", phi)
    f, fn = phi[transition.s], phi[transition.s_next]
    sf_td_update(state, transition, phi, alpha=alpha_scale * state.alpha_xi)
    reward_update(state, transition, phi, alpha=alpha_scale * state.alpha_w)
    y = transition.r + state.gamma * eta_q_target(fn, state)
    col = state.theta[:, transition.a]
    col += alpha_scale * state.alpha_theta * (y - f @ col) * f
    if not math.isfinite(col.sum()):
        raise NumericOverflowError("action values became non-finite")
    return state


class ReplayBuffer:
    """Fixed-capacity FIFO buffer with uniform sampling with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._items), size=n)
        return [self._items[i] for i in idx]

    def ordered(self) -> list:
        """Contents from oldest to newest."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next :] + self._items[: self._next]


def _batch_arrays(minibatch, phi):
    phi = np.asarray(getattr(phi, "phi", phi))
    s = np.array([t.s for t in minibatch])
    s2 = np.array([t.s_next for t in minibatch])
    a = np.array([t.a for t in minibatch])
    r = np.array([t.r for t in minibatch], dtype=float)
    return phi[s], phi[s2], a, r


def fitted_q_loss_value(theta, xi, w, frozen, minibatch, phi, eta, gamma, weights=None) -> float:
    """Total minibatch loss with the stop-gradient targets built from ``frozen = (theta, xi, w)``.

    Used to check the analytic gradients by finite differences: perturbing
    ``theta, xi, w`` while holding ``frozen`` fixed is exactly what detaching means.
    """
    return _losses(theta, xi, w, frozen, minibatch, phi, eta, gamma, weights, grads=False).total


def fitted_q_losses(state: QLearnerState, minibatch, phi, weights=None) -> LossBreakdown:
    """Minibatch SF, reward and Q losses plus their gradients w.r.t. ``theta, xi, w``.

    ``weights`` (summing to 1) replaces the uniform 1/n average when given.
    """
    frozen = (state.theta, state.xi, state.w)
    return _losses(state.theta, state.xi, state.w, frozen, minibatch, phi, state.eta, state.gamma, weights)


def _losses(theta, xi, w, frozen, minibatch, phi, eta, gamma, weights, grads=True) -> LossBreakdown:
    if len(minibatch) == 0:
        raise ValueError("empty minibatch")
    F, Fn, a, r = _batch_arrays(minibatch, phi)
    n = len(minibatch)
    p = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    theta_f, xi_f, w_f = frozen

    psi_next = Fn @ xi_f  # rows are psi(s')
    err_s = (F + eta * gamma * psi_next) - F @ xi
    err_r = r - F @ w
    q_mix = (1.0 - eta) * (psi_next @ theta_f) + eta * (psi_next @ w_f)[:, None]
    y = r + gamma * q_mix.max(axis=1)
    err_q = y - np.einsum("nd,dn->n", F, theta[:, a])

    out = LossBreakdown(
        l_sf=float(0.5 * p @ np.sum(err_s**2, axis=1)),
        l_r=float(0.5 * p @ err_r**2),
        l_q=float(0.5 * p @ err_q**2),
    )
    if grads:
        out.grad_xi = -F.T @ (p[:, None] * err_s)
        out.grad_w = -F.T @ (p * err_r)
        g = np.zeros_like(theta)
        np.add.at(g.T, a, -(p * err_q)[:, None] * F)
        out.grad_theta = g
    return out


@dataclass
class ControlConfig:
    eta: float = 0.5
    gamma: float = 0.99
    alpha: float = 0.1
    alpha_sf: float | None = None
    alpha_r: float | None = None
    steps: int = 50_000
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.2
    anneal_steps: int = 10_000
    alpha_decay_steps: int = 0  # 0 keeps rates constant, else alpha / (1 + t / decay)
    max_episode_steps: int = 200
    fitted_q: bool = False
    buffer: int = 10_000
    batch: int = 32
    learning_starts: int = 100

    def learner(self, d: int, n_actions: int) -> QLearnerState:
        return QLearnerState.initial(
            d,
            n_actions,
            self.eta,
            self.gamma,
            self.alpha,
            alpha_xi=self.alpha if self.alpha_sf is None else self.alpha_sf,
            alpha_w=self.alpha if self.alpha_r is None else self.alpha_r,
            epsilon_initial=self.epsilon_initial,
            epsilon_final=self.epsilon_final,
            anneal_steps=self.anneal_steps,
        )


def greedy_policy(state: QLearnerState, phi) -> np.ndarray:
    phi = np.asarray(getattr(phi, "phi", phi))
    return np.argmax(phi @ state.theta, axis=1)


def greedy_return(env: MdpSpec, state: QLearnerState, phi, rng: np.random.Generator, max_steps: int = 200) -> float:
    """Undiscounted return of one greedy rollout, cut at ``max_steps``."""
    phi = np.asarray(getattr(phi, "phi", phi))
    s = sample_start(env, rng)
    total = 0.0
    for _ in range(max_steps):
        tr = step(env, s, int(np.argmax(phi[s] @ state.theta)), rng)
        total += tr.r
        if tr.done:
            break
        s = tr.s_next
    return total


def run_control(
    env: MdpSpec,
    config: ControlConfig,
    rng: np.random.Generator,
    phi,
    state: QLearnerState | None = None,
    theta_log: list | None = None,
) -> tuple[QLearnerState, RunRecord]:
    """Train for ``config.steps`` environment steps; the record holds per-episode returns.

    If ``theta_log`` is a list, a copy of ``theta`` is appended after every step.
    """
    phi = np.asarray(getattr(phi, "phi", phi))
    state = state or config.learner(phi.shape[1], env.n_actions)
    buffer = ReplayBuffer(config.buffer) if config.fitted_q else None
    returns: list[float] = []
    started = time.perf_counter()

    s = sample_start(env, rng)
    ep_return, ep_len = 0.0, 0
    for t in range(config.steps):
        a = epsilon_greedy(phi[s] @ state.theta, state.epsilon(t), rng)
        tr = step(env, s, a, rng)
        scale = 1.0 / (1.0 + t / config.alpha_decay_steps) if config.alpha_decay_steps > 0 else 1.0
        if buffer is None:
            q_learning_step(state, tr, phi, alpha_scale=scale)
        else:
            buffer.push(tr)
            if len(buffer) >= min(config.learning_starts, config.buffer):
                losses = fitted_q_losses(state, buffer.sample(config.batch, rng), phi)
                state.theta -= scale * state.alpha_theta * losses.grad_theta
                state.xi -= scale * state.alpha_xi * losses.grad_xi
                state.w -= scale * state.alpha_w * losses.grad_w
                if not np.all(np.isfinite(state.theta)):
                    raise NumericOverflowError("action values became non-finite")
        if theta_log is not None:
            theta_log.append(state.theta.copy())
        ep_return += tr.r
        ep_len += 1
        if tr.done or ep_len >= config.max_episode_steps:
            returns.append(ep_return)
            s = sample_start(env, rng)
            ep_return, ep_len = 0.0, 0
        else:
            s = tr.s_next

    params = {k: v for k, v in asdict(config).items()}
    record = RunRecord(
        config_id=f"control|eta={config.eta!r}|alpha={config.alpha!r}",
        seed=-1,
        series=returns,
        params=params,
        duration=time.perf_counter() - started,
    )
    return state, record
