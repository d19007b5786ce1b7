"""Finite episodic MRPs/MDPs: the deterministic chain, the random walk and a gridworld.

States are integer indices into the transition matrices. Terminal states are
absorbing in matrix form and carry value zero.

Index conventions:

* ``build_deterministic_chain(n)``: states ``0..n-1`` are the chain (state ``i``
  here is state ``i+1`` in the usual 1-based drawing), state ``n`` is terminal.
* ``build_random_walk(n)``: states ``1..n`` are the walk, ``0`` and ``n+1`` are
  the left/right terminals, so state ``i`` keeps its 1-based label.
* ``build_gridworld``: cell ``(row, col)`` is state ``row * width + col``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

STOCH_TOL = 1e-12

# action index -> (d_row, d_col)
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
GRID_ACTION_NAMES = ("up", "down", "left", "right")


class InvalidSpecError(ValueError):
    pass


class InvalidPolicyError(ValueError):
    pass


class ContractError(RuntimeError):
    """A call violated an operation's precondition (e.g. stepping from a terminal)."""


class NoSolutionError(ArithmeticError):
    pass


def _check_start(start: np.ndarray, terminal: frozenset[int]) -> None:
    if np.any(start < 0) or abs(start.sum() - 1.0) > STOCH_TOL:
        raise InvalidSpecError("start distribution must be a probability vector")
    if any(start[t] > 0 for t in terminal):
        raise InvalidSpecError("start distribution puts mass on a terminal state")


def _check_rows(transition: np.ndarray, terminal: frozenset[int], what: str) -> None:
    if np.any(transition < 0):
        raise InvalidSpecError(f"{what}: negative transition probability")
    sums = transition.sum(axis=-1)
    for s in range(transition.shape[-2]):
        if abs(sums[..., s] - 1.0).max() > STOCH_TOL:
            raise InvalidSpecError(f"{what}: row {s} does not sum to 1")
        if s in terminal and np.any(transition[..., s, s] != 1.0):
            raise InvalidSpecError(f"{what}: terminal state {s} is not absorbing")


@dataclass(frozen=True)
class MrpSpec:
    """Markov reward process with rewards that are a function of (s, s')."""

    transition: np.ndarray  # (S, S)
    reward: np.ndarray  # (S, S), reward for the s -> s' transition
    terminal: frozenset[int]
    start: np.ndarray  # (S,)
    name: str = "mrp"

    def __post_init__(self):
        n = self.n_states
        if self.transition.shape != (n, n) or self.reward.shape != (n, n):
            raise InvalidSpecError("transition and reward must be n_states x n_states")
        _check_rows(self.transition, self.terminal, self.name)
        _check_start(self.start, self.terminal)
        for arr in (self.transition, self.reward, self.start):
            arr.flags.writeable = False

    @property
    def n_states(self) -> int:
        return self.start.shape[0]

    @property
    def nonterminal(self) -> np.ndarray:
        mask = np.ones(self.n_states, dtype=bool)
        mask[list(self.terminal)] = False
        return mask

    @cached_property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=-1)


@dataclass(frozen=True)
class MdpSpec:
    transition: np.ndarray  # (A, S, S)
    reward: np.ndarray  # (A, S, S)
    terminal: frozenset[int]
    start: np.ndarray
    name: str = "mdp"
    shape: tuple[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        a, n = self.n_actions, self.n_states
        if self.transition.shape != (a, n, n) or self.reward.shape != (a, n, n):
            raise InvalidSpecError("transition and reward must be n_actions x n_states x n_states")
        _check_rows(self.transition, self.terminal, self.name)
        _check_start(self.start, self.terminal)
        for arr in (self.transition, self.reward, self.start):
            arr.flags.writeable = False

    @property
    def n_states(self) -> int:
        return self.start.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def nonterminal(self) -> np.ndarray:
        mask = np.ones(self.n_states, dtype=bool)
        mask[list(self.terminal)] = False
        return mask

    @cached_property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=-1)

    @property
    def expected_reward(self) -> np.ndarray:
        """(S, A) expected one-step reward."""
        return np.einsum("asj,asj->sa", self.transition, self.reward)


Spec = MrpSpec | MdpSpec


@dataclass(frozen=True)
class Transition:
    s: int
    a: int | None
    r: float
    s_next: int
    done: bool


@dataclass
class Episode:
    transitions: list[Transition] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def states(self) -> list[int]:
        """Visited states including the final (terminal) one."""
        if not self.transitions:
            return []
        return [t.s for t in self.transitions] + [self.transitions[-1].s_next]

    @property
    def rewards(self) -> list[float]:
        return [t.r for t in self.transitions]

    @property
    def terminated(self) -> bool:
        return bool(self.transitions) and self.transitions[-1].done


def build_deterministic_chain(n: int) -> MrpSpec:
    if n < 2:
        raise InvalidSpecError(f"deterministic chain needs n >= 2, got {n}")
    size = n + 1
    P = np.zeros((size, size))
    R = np.zeros((size, size))
    for i in range(n):
        P[i, i + 1] = 1.0
    P[n, n] = 1.0
    R[n - 1, n] = 1.0
    start = np.zeros(size)
    start[0] = 1.0
    return MrpSpec(P, R, frozenset({n}), start, name=f"det-chain-{n}")


def build_random_walk(n: int) -> MrpSpec:
    if n < 3 or n % 2 == 0:
        raise InvalidSpecError(f"random walk needs odd n >= 3, got {n}")
    size = n + 2
    P = np.zeros((size, size))
    R = np.zeros((size, size))
    for i in range(1, n + 1):
        P[i, i - 1] = 0.5
        P[i, i + 1] = 0.5
    P[0, 0] = P[n + 1, n + 1] = 1.0
    R[n, n + 1] = 1.0
    start = np.zeros(size)
    start[(n + 1) // 2] = 1.0
    return MrpSpec(P, R, frozenset({0, n + 1}), start, name=f"random-walk-{n}")


def build_gridworld(
    width: int,
    height: int,
    goal: tuple[int, int],
    step_reward: float = -0.01,
    goal_reward: float = 1.0,
    start: tuple[int, int] | None = (0, 0),
) -> MdpSpec:
    """Deterministic 4-action grid; the goal cell is terminal and pays ``goal_reward`` on entry.

    Every other move costs ``step_reward``. A small cost makes zero-initialised
    action values optimistic, which drives exploration of untried actions.

    Cells are ``(row, col)``. Moving into a wall leaves the agent in place.
    ``start=None`` gives exploring starts: uniform over all non-goal cells.
    """
    if width < 1 or height < 1:
        raise InvalidSpecError("grid dimensions must be positive")
    for name, (r, c) in (("goal", goal), ("start", start or (0, 0))):
        if not (0 <= r < height and 0 <= c < width):
            raise InvalidSpecError(f"{name} {(r, c)} outside {height}x{width} grid")
    if goal == start:
        raise InvalidSpecError("start cell cannot be the goal")
    n = width * height
    g = goal[0] * width + goal[1]
    P = np.zeros((4, n, n))
    R = np.full((4, n, n), float(step_reward))
    for s in range(n):
        row, col = divmod(s, width)
        for a, (dr, dc) in enumerate(GRID_MOVES):
            if s == g:
                P[a, s, s] = 1.0
                continue
            nr, nc = row + dr, col + dc
            s2 = nr * width + nc if (0 <= nr < height and 0 <= nc < width) else s
            P[a, s, s2] = 1.0
    R[:, :, g] = goal_reward
    R[:, g, :] = 0.0
    if start is None:
        p0 = np.full(n, 1.0 / (n - 1))
        p0[g] = 0.0
    else:
        p0 = np.zeros(n)
        p0[start[0] * width + start[1]] = 1.0
    return MdpSpec(P, R, frozenset({g}), p0, name=f"gridworld-{width}x{height}", shape=(height, width))


def step(spec: Spec, s: int, a: int | None, rng: np.random.Generator) -> Transition:
    """Sample one transition from ``s``.

    The successor is drawn by inverting the row CDF with a single uniform, so
    one call consumes exactly one ``rng.random()`` draw.
    """
    if s in spec.terminal:
        raise ContractError(f"cannot step from terminal state {s}")
    if isinstance(spec, MdpSpec):
        if a is None:
            raise ContractError("an action is required to step an MDP")
        cdf, rewards = spec.cdf[a, s], spec.reward[a, s]
    else:
        if a is not None:
            raise ContractError("MRP transitions take no action")
        cdf, rewards = spec.cdf[s], spec.reward[s]
    s_next = _first_above(cdf, rng.random())
    return Transition(s, a, float(rewards[s_next]), s_next, s_next in spec.terminal)


def _first_above(cdf: np.ndarray, u: float) -> int:
    # clamp guards against a cdf ending a hair below 1
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


def sample_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: first index whose cumulative probability exceeds ``u``."""
    return _first_above(np.cumsum(probs), u)


def sample_start(spec: Spec, rng: np.random.Generator) -> int:
    return sample_index(spec.start, rng.random())


def run_episode(
    spec: MrpSpec, rng: np.random.Generator, max_steps: int = 1_000_000
) -> Episode:
    s = sample_start(spec, rng)
    ep = Episode()
    for _ in range(max_steps):
        tr = step(spec, s, None, rng)
        ep.transitions.append(tr)
        if tr.done:
            return ep
        s = tr.s_next
    raise ContractError(f"episode did not terminate within {max_steps} steps")


def matrix_form(spec: Spec, policy: np.ndarray | None = None):
    """Return ``(P_pi, R_bar, nonterminal_mask)``.

    ``R_bar[i]`` is the expected reward on leaving state ``i``; it is zero on
    terminal states. For an MDP, ``policy`` is an (S, A) matrix of action
    probabilities.
    """
    if isinstance(spec, MdpSpec):
        if policy is None:
            raise InvalidPolicyError("matrix_form of an MDP needs a policy")
        policy = np.asarray(policy, dtype=float)
        if policy.shape != (spec.n_states, spec.n_actions):
            raise InvalidPolicyError(f"policy must have shape {(spec.n_states, spec.n_actions)}")
        if np.any(policy < 0) or np.abs(policy.sum(axis=1) - 1.0).max() > STOCH_TOL:
            raise InvalidPolicyError("policy rows must be probability vectors")
        P = np.einsum("sa,asj->sj", policy, spec.transition)
        R_bar = np.einsum("sa,sa->s", policy, spec.expected_reward)
    else:
        P = np.array(spec.transition)
        R_bar = np.einsum("sj,sj->s", spec.transition, spec.reward)
    mask = spec.nonterminal
    for t in spec.terminal:
        P[t] = 0.0
        P[t, t] = 1.0
    R_bar = np.where(mask, R_bar, 0.0)
    return P, R_bar, mask


def true_values(spec: Spec, policy: np.ndarray | None, gamma: float) -> np.ndarray:
    """Solve ``(I - gamma P) v = R_bar`` on the non-terminal block; terminals get 0."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    P, R_bar, mask = matrix_form(spec, policy)
    A = np.eye(mask.sum()) - gamma * P[np.ix_(mask, mask)]
    if np.linalg.cond(A) > 1e12:
        raise NoSolutionError("value system is singular (non-terminating recurrent class?)")
    v = np.zeros(spec.n_states)
    v[mask] = np.linalg.solve(A, R_bar[mask])
    return v


def uniform_policy(spec: MdpSpec) -> np.ndarray:
    return np.full((spec.n_states, spec.n_actions), 1.0 / spec.n_actions)


def value_iteration(spec: MdpSpec, gamma: float, tol: float = 1e-12, max_iters: int = 100_000):
    """Optimal ``(v*, q*)`` by synchronous value iteration; q* is (S, A)."""
    mask = spec.nonterminal
    v = np.zeros(spec.n_states)
    for _ in range(max_iters):
        q = spec.expected_reward + gamma * np.einsum("asj,j->sa", spec.transition, v)
        q[~mask] = 0.0
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new, q
        v = v_new
    raise NoSolutionError("value iteration did not converge")


def optimal_actions(q_star: np.ndarray, tol: float = 1e-9) -> list[set[int]]:
    return [set(np.flatnonzero(row >= row.max() - tol)) for row in q_star]


def parse_env_config(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpecError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def _cell(text: str) -> tuple[int, int]:
    r, c = (int(v) for v in text.replace("(", "").replace(")", "").split(","))
    return r, c


def build_env(config: dict[str, str] | str) -> Spec:
    """Build an environment from a parsed (or raw) key=value config."""
    if isinstance(config, str):
        config = parse_env_config(config)
    kind = config.get("env")
    if kind == "det-chain":
        return build_deterministic_chain(int(config.get("n", 16)))
    if kind == "random-walk":
        return build_random_walk(int(config.get("n", 19)))
    if kind == "gridworld":
        width = int(config.get("width", 5))
        height = int(config.get("height", 5))
        goal = _cell(config["goal"]) if "goal" in config else (height - 1, width - 1)
        start = config.get("start", "0,0")
        start = None if start == "uniform" else _cell(start)
        return build_gridworld(
            width,
            height,
            goal,
            step_reward=float(config.get("step_reward", -0.01)),
            goal_reward=float(config.get("goal_reward", 1.0)),
            start=start,
        )
    raise InvalidSpecError(f"unknown env {kind!r}")
