"""Synthetic environments, offline data generation, and dataset ingestion.

Environment families:

* small named tabular MDPs (a two-state chain and a one-state bandit)
  plus a seeded random-MDP generator, all solvable exactly by the
  oracle module;
* a smooth continuous-state family with independent transitions, whose
  optimal contrast is available in closed form because every
  state-independent term cancels;
* a decomposable-transition tabular family on a state lattice, where an
  action-specific smooth kernel is mixed with a shared one;
* a one-dimensional two-action family with an explicit margin exponent,
  used with discount zero so its contrast is the reward difference.

Rollouts log the behavior policy's probability of every taken action,
and trajectories use independent per-trajectory seed streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, Policy, Trajectory, load_dataset_jsonl, one_hot, validate_dataset
from .errors import DataError
from .oracle import TabularMDP

__all__ = [
    "chain2_mdp",
    "ss1_mdp",
    "gen_random_tabular",
    "gen_decomposable_tabular",
    "TabularEnv",
    "SmoothEnvSpec",
    "SmoothEnv",
    "MarginEnvSpec",
    "MarginEnv",
    "margin_contrast",
    "rollout",
    "glycemic_reward",
    "insulin_to_action",
    "ingest_jsonl",
]


def chain2_mdp() -> TabularMDP:
    """Two states, two actions; the action chosen is the next state and
    also the reward.  Behavior is uniform."""
    p = np.zeros((2, 2, 2))
    for s in range(2):
        for a in range(2):
            p[s, a, a] = 1.0
    r = np.tile(np.array([0.0, 1.0]), (2, 1))
    b = np.full((2, 2), 0.5)
    return TabularMDP(p, r, b)


def ss1_mdp() -> TabularMDP:
    """Single state, two actions, reward equal to the action id."""
    p = np.ones((1, 2, 1))
    r = np.array([[0.0, 1.0]])
    b = np.array([[0.5, 0.5]])
    return TabularMDP(p, r, b)


def gen_random_tabular(
    num_states: int, num_actions: int, seed: int, reward_scale: float = 1.0
) -> TabularMDP:
    """Random ergodic-ish MDP: Dirichlet transition rows, rewards uniform
    on [0, reward_scale], uniform behavior."""
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    p /= p.sum(axis=2, keepdims=True)
    r = reward_scale * rng.random((num_states, num_actions))
    b = np.full((num_states, num_actions), 1.0 / num_actions)
    return TabularMDP(p, r, b)


def _lattice(num_states: int) -> np.ndarray:
    # cell centers of a uniform partition of [0, 1]
    return (np.arange(num_states) + 0.5) / num_states


def gen_decomposable_tabular(
    num_states: int,
    num_actions: int,
    seed: int,
    mix_weight: float = 0.3,
    shared_bandwidth: float = 0.15,
    action_bandwidth: float = 0.1,
    action_shift: float = 0.25,
) -> TabularMDP:
    """Tabular MDP on a [0, 1] lattice whose transition kernel splits into
    a shared smooth random-walk part and an action-shifted smooth part.

    P[s, a] = (1 - mix_weight) * K0[s] + mix_weight * K*_a[s], with both
    kernels row-stochastic Gaussian bumps in the lattice coordinate.
    """
    if not (0.0 <= mix_weight <= 1.0):
        raise ValueError("mix_weight must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    x = _lattice(num_states)
    shared = np.exp(-0.5 * ((x[:, None] - x[None, :]) / shared_bandwidth) ** 2)
    shared /= shared.sum(axis=1, keepdims=True)
    p = np.empty((num_states, num_actions, num_states))
    for a in range(num_actions):
        center = np.clip(x + action_shift * (a - (num_actions - 1) / 2.0), 0.0, 1.0)
        bump = np.exp(-0.5 * ((center[:, None] - x[None, :]) / action_bandwidth) ** 2)
        bump /= bump.sum(axis=1, keepdims=True)
        p[:, a, :] = (1.0 - mix_weight) * shared + mix_weight * bump
    phases = rng.uniform(0.0, 2 * np.pi, size=num_actions)
    r = np.stack([np.sin(2 * np.pi * x + phases[a]) for a in range(num_actions)], axis=1)
    b = np.full((num_states, num_actions), 1.0 / num_actions)
    return TabularMDP(p, r, b)


class TabularEnv:
    """Simulator view of a tabular MDP with one-hot encoded states."""

    def __init__(self, mdp: TabularMDP):
        self.mdp = mdp
        self.state_dim = mdp.num_states
        self.num_actions = mdp.num_actions

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return one_hot(rng.integers(self.mdp.num_states), self.mdp.num_states)[0]

    def step(self, state: np.ndarray, action: int, rng: np.random.Generator):
        s = int(np.argmax(state))
        s_next = rng.choice(self.mdp.num_states, p=self.mdp.transition[s, action])
        reward = float(self.mdp.reward[s, action])
        return one_hot(s_next, self.mdp.num_states)[0], reward


@dataclass
class SmoothEnvSpec:
    """Independent-transition family on [0, 1]^d with a reward that is the
    sum of a rough shared baseline and a smooth action-specific term."""

    state_dim: int = 1
    num_actions: int = 2
    contrast_amplitude: float = 0.7
    contrast_frequency: float = 1.0
    baseline_amplitude: float = 0.9
    baseline_frequency: float = 6.0
    noise_scale: float = 0.1


class SmoothEnv:
    """States are redrawn uniformly at every step, independent of the
    action, so any state-independent value term cancels from the optimal
    contrast and ``contrast_table`` is exact in closed form."""

    def __init__(self, spec: SmoothEnvSpec):
        self.spec = spec
        self.state_dim = spec.state_dim
        self.num_actions = spec.num_actions

    def _feature(self, states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states).mean(axis=1)

    def action_reward(self, action: int, states: np.ndarray) -> np.ndarray:
        """Smooth action-specific reward component (zero for action 0)."""
        if action == 0:
            return np.zeros(np.atleast_2d(states).shape[0])
        z = self._feature(states)
        phase = 0.25 * action
        return self.spec.contrast_amplitude * np.sin(
            2 * np.pi * self.spec.contrast_frequency * (z - phase)
        )

    def shared_reward(self, states: np.ndarray) -> np.ndarray:
        z = self._feature(states)
        return self.spec.baseline_amplitude * np.sin(
            2 * np.pi * self.spec.baseline_frequency * z
        )

    def mean_reward(self, action: int, states: np.ndarray) -> np.ndarray:
        return self.action_reward(action, states) + self.shared_reward(states)

    def contrast_table(self, states: np.ndarray, baseline_action: int = 0) -> np.ndarray:
        """Exact optimal contrast for every action against the baseline."""
        states = np.atleast_2d(states)
        cols = [self.action_reward(a, states) for a in range(self.num_actions)]
        table = np.stack(cols, axis=1)
        return table - table[:, [baseline_action]]

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return rng.random(self.spec.state_dim)

    def step(self, state: np.ndarray, action: int, rng: np.random.Generator):
        reward = float(self.mean_reward(action, state[None, :])[0])
        if self.spec.noise_scale > 0:
            reward += self.spec.noise_scale * rng.standard_normal()
        return rng.random(self.spec.state_dim), reward


@dataclass
class MarginEnvSpec:
    """Two-action, one-dimensional family whose contrast is s**(1/alpha)
    on the positive half line and zero elsewhere; meant to be used with
    discount zero so that contrast is exactly the reward difference."""

    alpha: float = 1.0
    noise_scale: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def margin_contrast(spec: MarginEnvSpec, s) -> np.ndarray | float:
    """Closed-form contrast of the margin family at states in [-1, 1].

    The set where the contrast lies in (0, eps] has length eps**alpha.
    """
    arr = np.asarray(s, dtype=np.float64)
    out = np.where(arr > 0.0, np.power(np.clip(arr, 0.0, None), 1.0 / spec.alpha), 0.0)
    return float(out) if np.isscalar(s) or arr.ndim == 0 else out


class MarginEnv:
    state_dim = 1
    num_actions = 2

    def __init__(self, spec: MarginEnvSpec):
        self.spec = spec

    def mean_reward(self, action: int, states: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(states)[:, 0]
        if action == 0:
            return np.zeros(s.shape[0])
        return np.asarray(margin_contrast(self.spec, s))

    def contrast_table(self, states: np.ndarray, baseline_action: int = 0) -> np.ndarray:
        states = np.atleast_2d(states)
        table = np.stack([self.mean_reward(a, states) for a in range(2)], axis=1)
        return table - table[:, [baseline_action]]

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=1)

    def step(self, state: np.ndarray, action: int, rng: np.random.Generator):
        reward = float(self.mean_reward(action, state[None, :])[0])
        if self.spec.noise_scale > 0:
            reward += self.spec.noise_scale * rng.standard_normal()
        return rng.uniform(-1.0, 1.0, size=1), reward


def rollout(env, behavior: Policy, n_trajectories: int, horizon: int, seed: int) -> Dataset:
    """Generate a logged dataset: `n_trajectories` trajectories of
    `horizon` steps each, with the behavior policy's probability of the
    taken action recorded as the propensity.

    Each trajectory uses its own child seed stream, so the output is
    independent of any parallel scheduling of trajectories.
    """
    if n_trajectories < 1 or horizon < 1:
        raise ValueError("need at least one trajectory and one step")
    streams = np.random.SeedSequence(seed).spawn(n_trajectories)
    trajectories = []
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        states = np.empty((horizon + 1, env.state_dim))
        actions = np.empty(horizon, dtype=np.int64)
        rewards = np.empty(horizon)
        props = np.empty(horizon)
        s = env.initial_state(rng)
        for t in range(horizon):
            states[t] = s
            a = int(behavior.sample(s[None, :], rng)[0])
            props[t] = behavior.prob_of(s[None, :], np.array([a]))[0]
            s, r = env.step(s, a, rng)
            actions[t] = a
            rewards[t] = r
        states[horizon] = s
        trajectories.append(Trajectory(i, states, actions, rewards, props))
    return Dataset(trajectories, num_actions=env.num_actions, state_dim=env.state_dim)


def glycemic_reward(glucose: float) -> float:
    """Penalty for a blood-glucose reading outside [80, 140] mg/dL: zero
    inside the band, quadratic below 80, power-1.35 above 140."""
    g = float(glucose)
    if g <= 0:
        raise ValueError("blood glucose must be positive")
    if 80.0 <= g <= 140.0:
        return 0.0
    if g < 80.0:
        return -((80.0 - g) ** 2) / 30.0
    return -((g - 140.0) ** 1.35) / 30.0


def insulin_to_action(insulin: float) -> int:
    """Discretize an insulin dose into five buckets: zero dose, three
    4-unit-wide bins, and everything above 12 units."""
    dose = float(insulin)
    if dose < 0:
        raise ValueError("insulin dose cannot be negative")
    if dose == 0.0:
        return 0
    for m in (1, 2, 3):
        if 4 * m - 4 < dose <= 4 * m:
            return m
    return 4


def ingest_jsonl(path, num_actions: int | None = None) -> Dataset:
    """Load a JSONL dataset file and reject it unless every invariant
    holds (finite values, propensities in (0, 1], actions in range)."""
    d = load_dataset_jsonl(path, num_actions=num_actions)
    report = validate_dataset(d)
    if not report.ok:
        raise DataError(f"dataset failed validation: {report}")
    return d
