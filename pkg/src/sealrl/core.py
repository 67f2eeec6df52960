"""Domain types shared by every stage: logged trajectories, datasets,
fold assignments for cross-fitting, and policy abstractions.

States are real vectors, actions are integer ids, and every logged step
carries the behavior policy's propensity for the action it took.  All
containers are immutable after construction; invariant violations are
collected by :func:`validate_dataset` rather than raised piecemeal, so
that ingestion can report every problem at once.
"""

from __future__ import annotations

import json
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError, InvalidFoldCountError

__all__ = [
    "Step",
    "Trajectory",
    "Dataset",
    "TransitionBatch",
    "FoldAssignment",
    "ValidationReport",
    "Policy",
    "DeterministicPolicy",
    "StochasticPolicy",
    "UniformPolicy",
    "EpsilonGreedyPolicy",
    "TablePolicy",
    "validate_dataset",
    "split_folds",
    "greedy_policy",
    "check_gamma",
    "one_hot",
    "parallel_map",
    "save_dataset_jsonl",
    "load_dataset_jsonl",
]


def check_gamma(gamma: float) -> float:
    """Validate a discount factor: 0 <= gamma < 1."""
    gamma = float(gamma)
    if not (0.0 <= gamma < 1.0):
        raise ValueError(f"discount factor must lie in [0, 1), got {gamma}")
    return gamma


def one_hot(indices, width: int) -> np.ndarray:
    """Encode integer indices as one-hot rows of the given width."""
    idx = np.atleast_1d(np.asarray(indices, dtype=np.intp))
    out = np.zeros((idx.shape[0], width))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Step:
    """One logged transition: state, action taken, reward, behavior
    propensity of the taken action, and the observed next state."""

    state: np.ndarray
    action: int
    reward: float
    propensity: float
    next_state: np.ndarray


@dataclass
class Trajectory:
    """A logged trajectory of T steps plus the explicit terminal state,
    so that every step t has a next state (states[t + 1])."""

    id: int
    states: np.ndarray  # (T + 1, d)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    propensities: np.ndarray  # (T,)

    def __post_init__(self):
        self.states = _readonly(np.asarray(self.states, dtype=np.float64))
        self.actions = _readonly(np.asarray(self.actions, dtype=np.int64))
        self.rewards = _readonly(np.asarray(self.rewards, dtype=np.float64))
        self.propensities = _readonly(np.asarray(self.propensities, dtype=np.float64))
        if self.states.ndim != 2:
            raise DataError(f"trajectory {self.id}: states must be a (T+1, d) array")
        t = self.actions.shape[0]
        if t < 1:
            raise DataError(f"trajectory {self.id}: needs at least one step")
        if self.states.shape[0] != t + 1:
            raise DataError(
                f"trajectory {self.id}: {t} steps require {t + 1} states, "
                f"got {self.states.shape[0]}"
            )
        if self.rewards.shape != (t,) or self.propensities.shape != (t,):
            raise DataError(f"trajectory {self.id}: rewards/propensities length mismatch")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]

    def step(self, t: int) -> Step:
        return Step(
            state=self.states[t],
            action=int(self.actions[t]),
            reward=float(self.rewards[t]),
            propensity=float(self.propensities[t]),
            next_state=self.states[t + 1],
        )


@dataclass(frozen=True)
class TransitionBatch:
    """All steps of a dataset stacked into flat arrays (one row per step)."""

    states: np.ndarray  # (n, d)
    actions: np.ndarray  # (n,)
    rewards: np.ndarray  # (n,)
    propensities: np.ndarray  # (n,)
    next_states: np.ndarray  # (n, d)
    traj_ids: np.ndarray  # (n,)
    times: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.states.shape[0]


@dataclass
class Dataset:
    """A collection of logged trajectories with a shared state dimension
    and action count."""

    trajectories: list[Trajectory]
    num_actions: int
    state_dim: int

    def __post_init__(self):
        if not self.trajectories:
            raise DataError("dataset must contain at least one trajectory")
        ids = [tr.id for tr in self.trajectories]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate trajectory ids")

    @property
    def num_trajectories(self) -> int:
        return len(self.trajectories)

    @cached_property
    def transitions(self) -> TransitionBatch:
        states, actions, rewards, props, nxt, tids, times = [], [], [], [], [], [], []
        for tr in self.trajectories:
            t = tr.length
            states.append(tr.states[:t])
            nxt.append(tr.states[1:])
            actions.append(tr.actions)
            rewards.append(tr.rewards)
            props.append(tr.propensities)
            tids.append(np.full(t, tr.id, dtype=np.int64))
            times.append(np.arange(t, dtype=np.int64))
        return TransitionBatch(
            states=np.concatenate(states),
            actions=np.concatenate(actions),
            rewards=np.concatenate(rewards),
            propensities=np.concatenate(props),
            next_states=np.concatenate(nxt),
            traj_ids=np.concatenate(tids),
            times=np.concatenate(times),
        )

    def initial_states(self) -> np.ndarray:
        return np.stack([tr.states[0] for tr in self.trajectories])

    def subset(self, traj_ids: Iterable[int]) -> "Dataset":
        """Dataset restricted to the given trajectory ids (order preserved)."""
        keep = set(traj_ids)
        picked = [tr for tr in self.trajectories if tr.id in keep]
        if not picked:
            raise DataError("subset selects no trajectories")
        return Dataset(picked, self.num_actions, self.state_dim)

    def max_abs_reward(self) -> float:
        return float(np.max(np.abs(self.transitions.rewards)))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "ok" if self.ok else "; ".join(self.violations)


def validate_dataset(d: Dataset) -> ValidationReport:
    """Check every dataset invariant and list each violation found.

    An empty report means the dataset is well formed: finite values, all
    propensities in (0, 1], actions inside the action set, and a state
    dimension that is constant across trajectories.
    """
    problems: list[str] = []
    for tr in d.trajectories:
        where = f"trajectory {tr.id}"
        if tr.states.shape[1] != d.state_dim:
            problems.append(f"{where}: state dimension {tr.states.shape[1]} != {d.state_dim}")
        if not np.all(np.isfinite(tr.states)):
            problems.append(f"{where}: non-finite state coordinates")
        if not np.all(np.isfinite(tr.rewards)):
            problems.append(f"{where}: non-finite reward")
        bad_a = (tr.actions < 0) | (tr.actions >= d.num_actions)
        if np.any(bad_a):
            problems.append(f"{where}: action out of range at t={np.flatnonzero(bad_a)[0]}")
        bad_p = ~((tr.propensities > 0.0) & (tr.propensities <= 1.0))
        if np.any(bad_p | ~np.isfinite(tr.propensities)):
            problems.append(f"{where}: propensity not in (0,1] at t={np.flatnonzero(bad_p)[0]}")
    return ValidationReport(tuple(problems))


@dataclass(frozen=True)
class FoldAssignment:
    """A partition of trajectory ids into `num_folds` near-equal folds."""

    num_folds: int
    fold_of: dict[int, int]
    seed: int | None = None

    def ids_in(self, fold: int) -> list[int]:
        return sorted(i for i, k in self.fold_of.items() if k == fold)

    def ids_outside(self, fold: int) -> list[int]:
        return sorted(i for i, k in self.fold_of.items() if k != fold)

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_folds": self.num_folds,
                "fold_of": {str(i): k for i, k in sorted(self.fold_of.items())},
                "seed": self.seed,
            }
        )

    @staticmethod
    def from_json(text: str) -> "FoldAssignment":
        obj = json.loads(text)
        return FoldAssignment(
            num_folds=int(obj["num_folds"]),
            fold_of={int(i): int(k) for i, k in obj["fold_of"].items()},
            seed=obj.get("seed"),
        )


def split_folds(d: Dataset, num_folds: int, seed: int) -> FoldAssignment:
    """Randomly partition trajectory ids into folds of near-equal size.

    Deterministic for a fixed (dataset, num_folds, seed); fold sizes
    differ by at most one.
    """
    n = d.num_trajectories
    if not (1 <= num_folds <= n):
        raise InvalidFoldCountError(f"need 1 <= folds <= {n}, got {num_folds}")
    rng = np.random.default_rng(seed)
    ids = sorted(tr.id for tr in d.trajectories)
    perm = rng.permutation(n)
    fold_of = {ids[j]: int(pos % num_folds) for pos, j in enumerate(perm)}
    return FoldAssignment(num_folds=num_folds, fold_of=fold_of, seed=seed)


class Policy:
    """Maps states to action probabilities.

    Subclasses implement :meth:`action_probs`; deterministic policies
    put all mass on one action.  ``act`` returns the highest-probability
    action with ties broken toward the smallest id, and ``sample`` draws
    from the probabilities with a caller-supplied generator.
    """

    num_actions: int

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def act(self, states: np.ndarray) -> np.ndarray:
        return np.argmax(self.action_probs(states), axis=1)

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        probs = self.action_probs(states)
        cum = np.cumsum(probs, axis=1)
        u = rng.random(probs.shape[0])
        return np.minimum(
            (u[:, None] >= cum).sum(axis=1), self.num_actions - 1
        ).astype(np.int64)

    def prob_of(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        probs = self.action_probs(states)
        return probs[np.arange(probs.shape[0]), np.asarray(actions, dtype=np.intp)]


class DeterministicPolicy(Policy):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], num_actions: int):
        self._fn = fn
        self.num_actions = num_actions

    def act(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(self._fn(np.atleast_2d(states)), dtype=np.int64)

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        return one_hot(self.act(states), self.num_actions)


class StochasticPolicy(Policy):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], num_actions: int):
        self._fn = fn
        self.num_actions = num_actions

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        probs = np.atleast_2d(np.asarray(self._fn(np.atleast_2d(states)), dtype=np.float64))
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("action probabilities must be nonnegative and sum to 1")
        return probs


class UniformPolicy(Policy):
    def __init__(self, num_actions: int):
        self.num_actions = num_actions

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        n = np.atleast_2d(states).shape[0]
        return np.full((n, self.num_actions), 1.0 / self.num_actions)


class EpsilonGreedyPolicy(Policy):
    """Mixture of a base policy with uniform exploration mass epsilon."""

    def __init__(self, base: Policy, epsilon: float):
        if not (0.0 <= epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        self.base = base
        self.epsilon = float(epsilon)
        self.num_actions = base.num_actions

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        probs = self.base.action_probs(states)
        return (1.0 - self.epsilon) * probs + self.epsilon / self.num_actions


class TablePolicy(Policy):
    """Policy over one-hot encoded tabular states, given a (nS, nA)
    table of action probabilities."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)
        if np.any(np.abs(self.table.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("each table row must sum to 1")
        self.num_actions = self.table.shape[1]

    def action_probs(self, states: np.ndarray) -> np.ndarray:
        idx = np.argmax(np.atleast_2d(states), axis=1)
        return self.table[idx]


def greedy_policy(q) -> DeterministicPolicy:
    """Deterministic argmax policy for a state-action value model.

    `q` must expose ``predict_all(states) -> (n, num_actions)``.  Ties
    resolve to the smallest action id so repeated runs agree exactly.
    """

    def _act(states: np.ndarray) -> np.ndarray:
        return np.argmax(q.predict_all(states), axis=1)

    return DeterministicPolicy(_act, q.num_actions)


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Apply `fn` to items, optionally on a thread pool.

    Results are returned in input order, so the output is independent of
    scheduling; callers must make `fn` deterministic per item (e.g. by
    passing per-item seeds).
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# Dataset file schema: JSON Lines, one trajectory per line with keys
# id / states / actions / rewards / propensities.

def _trajectory_record(tr: Trajectory) -> dict:
    return {
        "id": int(tr.id),
        "states": tr.states.tolist(),
        "actions": tr.actions.tolist(),
        "rewards": tr.rewards.tolist(),
        "propensities": tr.propensities.tolist(),
    }


def save_dataset_jsonl(d: Dataset, path) -> None:
    with open(path, "w") as fh:
        for tr in d.trajectories:
            fh.write(json.dumps(_trajectory_record(tr)) + "\n")


def load_dataset_jsonl(path, num_actions: int | None = None) -> Dataset:
    """Parse a JSONL dataset file without validating value invariants.

    Raises DataError naming the offending line on parse failure.  If
    `num_actions` is omitted it is inferred as 1 + max logged action.
    """
    trajectories: list[Trajectory] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                trajectories.append(
                    Trajectory(
                        id=int(obj["id"]),
                        states=np.asarray(obj["states"], dtype=np.float64),
                        actions=np.asarray(obj["actions"], dtype=np.int64),
                        rewards=np.asarray(obj["rewards"], dtype=np.float64),
                        propensities=np.asarray(obj["propensities"], dtype=np.float64),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {lineno}: cannot parse trajectory ({exc})") from exc
    if not trajectories:
        raise DataError("dataset file holds no trajectories")
    state_dim = trajectories[0].states.shape[1]
    if num_actions is None:
        num_actions = int(max(tr.actions.max() for tr in trajectories)) + 1
    return Dataset(trajectories, num_actions=num_actions, state_dim=state_dim)
