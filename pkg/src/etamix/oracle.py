"""Closed-form linear fixed points used as ground truth for the stochastic learners.

Everything here is a pure function of ``(Phi, D, P, R_bar, gamma, eta)``:

* ``td_fixed_point``:  (Phi'D Phi - g Phi'D P Phi)^-1 Phi'D R
* ``sf_fixed_point``:  (Phi'D Phi - eta g Phi'D P Phi)^-1 Phi'D Phi
* ``reward_regression_solution``:  (Phi'D Phi)^-1 Phi'D R

``D`` may be given either as the diagonal matrix or as the vector of weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import MdpSpec, NoSolutionError, Spec, matrix_form

COND_LIMIT = 1e12
RANK_RTOL = 1e-10


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, what: str, cond: float):
        super().__init__(f"{what} is singular to working precision (condition number {cond:.3e})")
        self.cond = cond


class DivergenceError(ArithmeticError):
    def __init__(self, msg: str, trace: list[float]):
        super().__init__(msg)
        self.trace = trace


class UndefinedRankError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows are per-state features; terminal rows must be zero."""

    phi: np.ndarray

    def __post_init__(self):
        if self.phi.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        sv = np.linalg.svd(self.phi, compute_uv=False)
        if sv.size == 0 or np.sum(sv > RANK_RTOL * sv[0]) < self.d:
            raise ValueError("feature matrix columns are not linearly independent")
        self.phi.flags.writeable = False

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    @property
    def n_states(self) -> int:
        return self.phi.shape[0]

    def check_terminals(self, terminal) -> None:
        for t in terminal:
            if np.any(self.phi[t] != 0):
                raise ValueError(f"terminal state {t} has a non-zero feature row")


def tabular_features(spec: Spec) -> FeatureMatrix:
    """One-hot features over the non-terminal states, zero rows for terminals."""
    mask = spec.nonterminal
    phi = np.zeros((spec.n_states, int(mask.sum())))
    phi[np.flatnonzero(mask), np.arange(mask.sum())] = 1.0
    return FeatureMatrix(phi)


@dataclass(frozen=True)
class OnPolicyDistribution:
    d_pi: np.ndarray

    @property
    def as_diagonal(self) -> np.ndarray:
        return np.diag(self.d_pi)


@dataclass
class FixedPointReport:
    theta_td: np.ndarray
    xi_eta: np.ndarray
    w_hat: np.ndarray
    theta_td_eta: np.ndarray
    lemma_residual: float
    iteration_trace: list[float] = field(default_factory=list)
    eta: float = float("nan")
    gamma: float = float("nan")

    @property
    def final_distance(self) -> float:
        return self.iteration_trace[-1] if self.iteration_trace else float("nan")

    def to_text(self) -> str:
        def vec(x):
            return np.array2string(np.asarray(x), precision=6, suppress_small=True, max_line_width=88)

        lines = [
            f"{'eta':<22}{self.eta:.6g}",
            f"{'gamma':<22}{self.gamma:.6g}",
            f"{'identity residual':<22}{self.lemma_residual:.3e}",
            f"{'iterations':<22}{max(len(self.iteration_trace) - 1, 0)}",
            f"{'final |theta-TD|_inf':<22}{self.final_distance:.3e}",
            f"{'theta_TD':<22}{vec(self.theta_td)}",
            f"{'theta_TD (eta*gamma)':<22}{vec(self.theta_td_eta)}",
            f"{'w_hat':<22}{vec(self.w_hat)}",
            f"{'xi_eta diag':<22}{vec(np.diag(self.xi_eta))}",
        ]
        return "\n".join(lines)


def _weights(D: np.ndarray) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return np.diag(D) if D.ndim == 2 else D


def _solve(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystemError(what, cond)
    return np.linalg.solve(A, b)


def _phi(Phi) -> np.ndarray:
    return Phi.phi if isinstance(Phi, FeatureMatrix) else np.asarray(Phi, dtype=float)


def _gram(Phi, D):
    """Return ``(Phi'D Phi, Phi'D)``."""
    phi = _phi(Phi)
    PhiD = phi.T * _weights(D)
    return PhiD @ phi, PhiD


def on_policy_distribution(spec: Spec, policy: np.ndarray | None = None) -> OnPolicyDistribution:
    """Normalized expected visit counts per episode, or the stationary law if there are no terminals."""
    P, _, mask = matrix_form(spec, policy)
    d = np.zeros(spec.n_states)
    if spec.terminal:
        Q = P[np.ix_(mask, mask)]
        A = np.eye(Q.shape[0]) - Q.T
        if np.linalg.cond(A) > COND_LIMIT:
            raise NoSolutionError("episodes do not terminate with probability 1")
        visits = np.linalg.solve(A, spec.start[mask])
        d[mask] = visits / visits.sum()
    else:
        vals, vecs = np.linalg.eig(P.T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        if abs(vals[k] - 1.0) > 1e-9:
            raise NoSolutionError("no stationary distribution found")
        v = np.real(vecs[:, k])
        d = np.abs(v) / np.abs(v).sum()
    return OnPolicyDistribution(d)


def td_fixed_point(Phi, D, P_pi, R_bar, gamma: float) -> np.ndarray:
    G, PhiD = _gram(Phi, D)
    A = G - gamma * PhiD @ P_pi @ _phi(Phi)
    return _solve(A, PhiD @ R_bar, "TD system")


def sf_fixed_point(Phi, D, P_pi, gamma: float, eta: float) -> np.ndarray:
    G, PhiD = _gram(Phi, D)
    A = G - eta * gamma * PhiD @ P_pi @ _phi(Phi)
    return _solve(A, G, "SF system")


def reward_regression_solution(Phi, D, R_bar) -> np.ndarray:
    G, PhiD = _gram(Phi, D)
    return _solve(G, PhiD @ R_bar, "feature Gram matrix")


def lemma_identity_residual(Phi, D, P_pi, R_bar, gamma: float, eta: float) -> float:
    """Sup-norm gap in  Xi^-1 theta_TD = (1-eta) theta_TD + eta Xi^-1 theta_TD^eta."""
    theta = td_fixed_point(Phi, D, P_pi, R_bar, gamma)
    theta_eta = td_fixed_point(Phi, D, P_pi, R_bar, eta * gamma)
    xi = sf_fixed_point(Phi, D, P_pi, gamma, eta)
    lhs = _solve(xi, theta, "Xi")
    rhs = (1.0 - eta) * theta + eta * _solve(xi, theta_eta, "Xi")
    return float(np.max(np.abs(lhs - rhs)))


def proposition_check(
    Phi,
    D,
    P_pi,
    R_bar,
    gamma: float,
    eta: float,
    theta0: np.ndarray | None = None,
    n_iters: int = 10_000,
    tol: float = 0.0,
) -> FixedPointReport:
    """Iterate the expected eta-mixture update with the SF and reward heads at their fixed points.

    The trace holds ``|theta_k - theta_TD|_inf`` for ``k = 0..n_iters`` (fewer
    if ``tol > 0`` and the distance falls below it).
    """
    phi = _phi(Phi)
    theta_td = td_fixed_point(phi, D, P_pi, R_bar, gamma)
    theta_td_eta = td_fixed_point(phi, D, P_pi, R_bar, eta * gamma)
    xi = sf_fixed_point(phi, D, P_pi, gamma, eta)
    w_hat = reward_regression_solution(phi, D, R_bar)
    G, PhiD = _gram(phi, D)
    # theta_{k+1} = M theta_k + b
    PPhiXi = P_pi @ phi @ xi
    M = _solve(G, (1.0 - eta) * gamma * PhiD @ PPhiXi, "feature Gram matrix")
    b = _solve(G, PhiD @ (R_bar + eta * gamma * PPhiXi @ w_hat), "feature Gram matrix")

    theta = np.zeros(phi.shape[1]) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    trace = [float(np.max(np.abs(theta - theta_td)))]
    for _ in range(n_iters):
        theta = M @ theta + b
        dist = float(np.max(np.abs(theta - theta_td)))
        trace.append(dist)
        if not np.isfinite(dist) or dist > 1e6:
            raise DivergenceError(f"expected update diverged (distance {dist:.3e})", trace)
        if dist < tol:
            break
    return FixedPointReport(
        theta_td=theta_td,
        xi_eta=xi,
        w_hat=w_hat,
        theta_td_eta=theta_td_eta,
        lemma_residual=lemma_identity_residual(phi, D, P_pi, R_bar, gamma, eta),
        iteration_trace=trace,
        eta=eta,
        gamma=gamma,
    )


def effective_rank(matrix: np.ndarray, delta: float = 0.01) -> int:
    """srank: fewest leading singular values holding a ``1 - delta`` share of their sum."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    sv = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    total = sv.sum()
    if sv.size == 0 or total == 0.0:
        raise UndefinedRankError("effective rank of an all-zero matrix is undefined")
    ratio = np.cumsum(sv) / total
    # slack of a few ulps so exact ties (e.g. k/n == 1 - delta) are not lost to rounding
    return int(np.argmax(ratio >= (1.0 - delta) - 1e-12)) + 1


def problem_from_spec(spec: Spec, policy: np.ndarray | None = None, features: FeatureMatrix | None = None):
    """Return ``(Phi, d_pi, P_pi, R_bar)`` for a spec, tabular features by default."""
    if isinstance(spec, MdpSpec) and policy is None:
        raise ValueError("MDP specs need a policy")
    features = features or tabular_features(spec)
    features.check_terminals(spec.terminal)
    P, R_bar, _ = matrix_form(spec, policy)
    d = on_policy_distribution(spec, policy).d_pi
    return features.phi, d, P, R_bar


def random_instance(rng: np.random.Generator, n_states: int, d: int):
    """Random ergodic MRP with full-rank features; returns ``(Phi, d_pi, P, R_bar)``.

    Weights are the stationary distribution, which keeps the TD matrix
    positive definite for every discount below one.
    """
    P = rng.random((n_states, n_states)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    R_bar = rng.normal(size=n_states)
    while True:
        phi = rng.normal(size=(n_states, d))
        sv = np.linalg.svd(phi, compute_uv=False)
        if sv[-1] > 1e-3 * sv[0]:
            break
    vals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, int(np.argmin(np.abs(vals - 1.0)))])
    d_pi = np.abs(v) / np.abs(v).sum()
    return phi, d_pi, P, R_bar
