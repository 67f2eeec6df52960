"""Exact solvers for finite tabular MDPs.

Everything here is computed by direct linear algebra (fixed-point sweeps,
linear solves, power iteration) with no sampling, so the outputs serve as
ground truth for statistical tests of the learned pipeline: optimal and
policy Q-tables, the behavior chain's stationary law, discounted
visitation distributions, density ratios, and optimal contrasts.

Tables are indexed ``[state, action]`` throughout; tabular states are
one-hot encoded whenever they meet the vector-state interfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import Policy, TablePolicy, check_gamma, one_hot
from .errors import DataError, ErgodicityError

__all__ = [
    "TabularMDP",
    "value_iteration",
    "policy_q",
    "stationary_distribution",
    "discounted_visitation",
    "exact_density_ratio",
    "exact_state_density_ratio",
    "exact_contrast",
    "policy_matrix",
    "greedy_policy_from_table",
    "bellman_optimality_residual",
]

_STOCHASTIC_TOL = 1e-12


@dataclass
class TabularMDP:
    """A finite MDP: transition tensor P[s][a][s'], reward table r[s][a],
    and a strictly positive behavior policy b[s][a]."""

    transition: np.ndarray  # (nS, nA, nS), each row sums to 1
    reward: np.ndarray  # (nS, nA)
    behavior: np.ndarray  # (nS, nA), rows sum to 1, entries > 0

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.behavior = np.asarray(self.behavior, dtype=np.float64)
        ns, na = self.reward.shape
        if self.transition.shape != (ns, na, ns) or self.behavior.shape != (ns, na):
            raise DataError("transition/reward/behavior shapes are inconsistent")
        if np.any(np.abs(self.transition.sum(axis=2) - 1.0) > _STOCHASTIC_TOL):
            raise DataError("each transition row must sum to 1")
        if np.any(np.abs(self.behavior.sum(axis=1) - 1.0) > _STOCHASTIC_TOL):
            raise DataError("each behavior row must sum to 1")
        if np.any(self.behavior <= 0.0):
            raise DataError("behavior policy must put positive mass on every action")

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    def behavior_policy(self) -> TablePolicy:
        return TablePolicy(self.behavior)

    def to_json(self) -> str:
        return json.dumps(
            {
                "nS": self.num_states,
                "nA": self.num_actions,
                "P": self.transition.tolist(),
                "r": self.reward.tolist(),
                "b": self.behavior.tolist(),
            }
        )

    @staticmethod
    def from_json(text: str) -> "TabularMDP":
        obj = json.loads(text)
        m = TabularMDP(
            transition=np.asarray(obj["P"], dtype=np.float64),
            reward=np.asarray(obj["r"], dtype=np.float64),
            behavior=np.asarray(obj["b"], dtype=np.float64),
        )
        if m.num_states != int(obj["nS"]) or m.num_actions != int(obj["nA"]):
            raise DataError("declared nS/nA disagree with table shapes")
        return m


def policy_matrix(pi: Policy, num_states: int) -> np.ndarray:
    """Action probabilities of a policy evaluated on every one-hot state."""
    return pi.action_probs(one_hot(np.arange(num_states), num_states))


def greedy_policy_from_table(q_table: np.ndarray) -> TablePolicy:
    """Deterministic argmax policy of a Q-table (ties to smallest id)."""
    q_table = np.asarray(q_table, dtype=np.float64)
    probs = one_hot(np.argmax(q_table, axis=1), q_table.shape[1])
    return TablePolicy(probs)


def _pair_transition(m: TabularMDP, pi_mat: np.ndarray) -> np.ndarray:
    """Transition matrix on (state, action) pairs under policy pi:
    M[(s,a), (s',a')] = P[s,a,s'] * pi(a'|s')."""
    ns, na = m.num_states, m.num_actions
    step = m.transition.reshape(ns * na, ns)  # (s,a) -> s'
    return (step[:, :, None] * pi_mat[None, :, :]).reshape(ns * na, ns * na)


def bellman_optimality_residual(m: TabularMDP, q: np.ndarray, gamma: float) -> float:
    """Sup-norm gap between q and one application of the optimality operator."""
    tq = m.reward + gamma * m.transition @ q.max(axis=1)
    return float(np.max(np.abs(tq - q)))


def value_iteration(m: TabularMDP, gamma: float, tol: float = 1e-10) -> np.ndarray:
    """Optimal Q-table via fixed-point sweeps of the optimality operator.

    Returns a table whose optimality-operator residual is at most `tol`;
    the operator is a gamma-contraction so the sweep gap shrinks
    geometrically and termination is guaranteed.
    """
    gamma = check_gamma(gamma)
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros_like(m.reward)
    while True:
        tq = m.reward + gamma * m.transition @ q.max(axis=1)
        if np.max(np.abs(tq - q)) <= tol:
            return tq
        q = tq


def policy_q(m: TabularMDP, pi: Policy, gamma: float) -> np.ndarray:
    """Q-table of a fixed policy by direct linear solve of its fixed-point
    equation on (state, action) pairs."""
    gamma = check_gamma(gamma)
    pi_mat = policy_matrix(pi, m.num_states)
    n = m.num_states * m.num_actions
    a = np.eye(n) - gamma * _pair_transition(m, pi_mat)
    q = np.linalg.solve(a, m.reward.reshape(n))
    return q.reshape(m.num_states, m.num_actions)


def stationary_distribution(
    m: TabularMDP, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Stationary law of (state, action) pairs under the behavior policy.

    Power iteration on the state chain induced by the behavior policy;
    raises ErgodicityError when the iteration fails to settle (periodic
    or reducible chains) or leaves some state with negligible mass.
    """
    state_chain = np.einsum("sa,sat->st", m.behavior, m.transition)
    # non-uniform start: the uniform vector is invariant under permutation
    # chains, which would mask periodicity
    mu = np.arange(1.0, m.num_states + 1.0)
    mu /= mu.sum()
    for _ in range(max_iter):
        nxt = mu @ state_chain
        if np.max(np.abs(nxt - mu)) <= tol:
            mu = nxt
            break
        mu = nxt
    else:
        raise ErgodicityError("stationary distribution did not converge")
    if np.any(mu <= 1e-12):
        raise ErgodicityError("stationary law has (near-)zero mass on some state")
    return mu[:, None] * m.behavior


def discounted_visitation(
    m: TabularMDP, pi: Policy, gamma: float, a0: int, s0: int
) -> np.ndarray:
    """Discounted average visitation law of (state, action) pairs from an
    initial pair, with the policy driving actions from time 1 on.

    Entry [s', a'] is (1 - gamma) * sum_{t>=1} gamma^(t-1) * P(S_t = s',
    A_t = a' | S_0 = s0, A_0 = a0), obtained by a geometric-series linear
    solve rather than truncation.
    """
    gamma = check_gamma(gamma)
    pi_mat = policy_matrix(pi, m.num_states)
    p1 = (m.transition[s0, a0][:, None] * pi_mat).reshape(-1)
    mat = _pair_transition(m, pi_mat)
    n = p1.shape[0]
    x = np.linalg.solve(np.eye(n) - gamma * mat.T, (1.0 - gamma) * p1)
    return x.reshape(m.num_states, m.num_actions)


def exact_density_ratio(m: TabularMDP, pi: Policy, gamma: float) -> np.ndarray:
    """Visitation-over-stationary density ratio table.

    Entry [s, a, s', a'] is the discounted visitation mass of (s', a')
    from the start pair (s, a) divided by the stationary mass of
    (s', a') under the behavior policy.
    """
    p_inf = stationary_distribution(m)
    ns, na = m.num_states, m.num_actions
    omega = np.empty((ns, na, ns, na))
    for s in range(ns):
        for a in range(na):
            omega[s, a] = discounted_visitation(m, pi, gamma, a, s) / p_inf
    return omega


def exact_state_density_ratio(m: TabularMDP, pi: Policy, gamma: float) -> np.ndarray:
    """State-marginal ratio w[s, a, s']: the action-marginalized discounted
    visitation of s' from the pair (s, a), over the stationary state law.

    The full ratio factorizes as pi(a'|s') / b(a'|s') * w[s, a, s'].
    """
    p_inf = stationary_distribution(m)
    mu = p_inf.sum(axis=1)
    ns, na = m.num_states, m.num_actions
    w = np.empty((ns, na, ns))
    for s in range(ns):
        for a in range(na):
            w[s, a] = discounted_visitation(m, pi, gamma, a, s).sum(axis=1) / mu
    return w


def exact_contrast(m: TabularMDP, gamma: float, a0: int, tol: float = 1e-12) -> np.ndarray:
    """Optimal contrast table: Q*(s, a) - Q*(s, a0)."""
    q = value_iteration(m, gamma, tol=tol)
    return q - q[:, [a0]]
