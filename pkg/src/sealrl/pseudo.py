"""Cross-fitted doubly-robust pseudo-outcomes.

For every logged step and every action a, the pseudo Q-outcome combines
three pieces computed from nuisances trained on the *other* folds:

* the initial Q-estimate at (a, state);
* an inverse-propensity-weighted one-step Bellman residual, active only
  when the logged action equals a (so off-arm propensities are never
  needed);
* a visitation-ratio-weighted average of Bellman residuals over a
  minibatch of same-fold steps, scaled by gamma / (1 - gamma).

The conditional mean of the result matches the target Q-value when
either the Q-model or the ratio is correct.  Contrast targets are the
difference against the baseline action's pseudo-outcome, computed with
independent minibatch draws per action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    FoldAssignment,
    Policy,
    Step,
    TransitionBatch,
    check_gamma,
    parallel_map,
)
from .errors import CrossFittingError, EmptyDataError

__all__ = [
    "LearnedOmega",
    "ExactOmega",
    "ConstantOmega",
    "FoldNuisance",
    "NuisanceSet",
    "PseudoTable",
    "bellman_residual",
    "bellman_residuals",
    "eta_tilde",
    "q_pseudo",
    "tau_pseudo",
    "build_pseudo_table",
    "choose_baseline_action",
]


class LearnedOmega:
    """Full density ratio from a trained weight model and a target policy:
    pi(a'|s') / b(a'|s') * w(s'|a,s), with b read from logged propensities."""

    def __init__(self, ratio_model, policy: Policy):
        self.ratio_model = ratio_model
        self.policy = policy

    def omega_matrix(self, anchor_actions, anchor_states, primed_states, primed_actions, primed_props):
        m, k = primed_actions.shape
        z = self.ratio_model.normalizer(anchor_actions, anchor_states)  # (m,)
        flat_sp = primed_states.reshape(m * k, -1)
        flat_a = np.repeat(anchor_actions, k)
        flat_s = np.repeat(anchor_states, k, axis=0)
        w_raw = self.ratio_model.raw(flat_sp, flat_a, flat_s).reshape(m, k)
        pi_prob = self.policy.prob_of(flat_sp, primed_actions.reshape(-1)).reshape(m, k)
        return pi_prob / primed_props * (w_raw / z[:, None])


class ExactOmega:
    """Oracle ratio table omega[s, a, s', a'] over one-hot tabular states."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    def omega_matrix(self, anchor_actions, anchor_states, primed_states, primed_actions, primed_props):
        m, k = primed_actions.shape
        s_idx = np.argmax(anchor_states, axis=1)
        sp_idx = np.argmax(primed_states.reshape(m * k, -1), axis=1).reshape(m, k)
        return self.table[s_idx[:, None], anchor_actions[:, None], sp_idx, primed_actions]


class ConstantOmega:
    """Fixed-value ratio, e.g. 1 everywhere."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def omega_matrix(self, anchor_actions, anchor_states, primed_states, primed_actions, primed_props):
        return np.full(primed_actions.shape, self.value)


@dataclass
class FoldNuisance:
    """Nuisances usable for one estimation fold: the initial Q-model, the
    policy derived from it, the ratio estimate, and a provenance tag of
    the folds whose data trained them."""

    q_model: object
    policy: Policy
    omega: object
    trained_on_folds: frozenset[int] = frozenset()


class NuisanceSet:
    def __init__(self, per_fold: dict[int, FoldNuisance]):
        self.per_fold = dict(per_fold)

    def for_fold(self, fold: int) -> FoldNuisance:
        return self.per_fold[fold]

    @staticmethod
    def shared(num_folds: int, q_model, policy: Policy, omega) -> "NuisanceSet":
        """One nuisance bundle reused for every fold; meant for oracle
        nuisances that were trained on no data at all."""
        nu = FoldNuisance(q_model, policy, omega, frozenset())
        return NuisanceSet({k: nu for k in range(num_folds)})


def bellman_residual(qhat, step: Step, gamma: float, next_state: np.ndarray | None = None) -> float:
    """One-step optimality residual: reward plus discounted max of the
    Q-model at the next state, minus the Q-value of the taken action."""
    nxt = step.next_state if next_state is None else next_state
    q_next = qhat.predict_all(nxt[None, :])[0].max()
    q_here = qhat.predict_all(step.state[None, :])[0][step.action]
    return step.reward + gamma * q_next - q_here


def bellman_residuals(qhat, tb: TransitionBatch, gamma: float) -> np.ndarray:
    """Vectorized residuals for a whole transition batch."""
    q_next = qhat.predict_all(tb.next_states).max(axis=1)
    q_here = qhat.predict_all(tb.states)[np.arange(len(tb)), tb.actions]
    return tb.rewards + gamma * q_next - q_here


def eta_tilde(
    anchor_action: int,
    anchor_state: np.ndarray,
    nuisance: FoldNuisance,
    fold_batch: TransitionBatch,
    minibatch_idx: np.ndarray,
    gamma: float,
) -> float:
    """Minibatch augmentation term: the average over sampled same-fold
    steps of ratio(step | anchor) times that step's Bellman residual."""
    idx = np.asarray(minibatch_idx, dtype=np.intp)
    if idx.size == 0:
        raise EmptyDataError("augmentation minibatch is empty")
    resid = bellman_residuals(nuisance.q_model, fold_batch, gamma)[idx]
    om = nuisance.omega.omega_matrix(
        np.array([anchor_action]),
        anchor_state[None, :],
        fold_batch.states[idx][None, :, :],
        fold_batch.actions[idx][None, :],
        fold_batch.propensities[idx][None, :],
    )[0]
    return float(np.mean(om * resid))


def q_pseudo(
    action: int,
    anchor: Step,
    nuisance: FoldNuisance,
    gamma: float,
    fold_batch: TransitionBatch | None = None,
    minibatch_idx: np.ndarray | None = None,
) -> float:
    """Doubly-robust pseudo-outcome for the Q-value of ``action`` at the
    anchor state.  With discount zero the augmentation term drops and
    this reduces to the single-stage AIPW form."""
    gamma = check_gamma(gamma)
    q_row = nuisance.q_model.predict_all(anchor.state[None, :])[0]
    value = float(q_row[action])
    if anchor.action == action:
        if anchor.propensity <= 0:
            raise ValueError("anchor propensity must be positive")
        resid = bellman_residual(nuisance.q_model, anchor, gamma)
        value += resid / anchor.propensity
    if gamma > 0:
        if fold_batch is None or minibatch_idx is None:
            raise EmptyDataError("augmentation term needs a minibatch")
        eta = eta_tilde(action, anchor.state, nuisance, fold_batch, minibatch_idx, gamma)
        value += gamma / (1.0 - gamma) * eta
    return value


def tau_pseudo(
    action: int,
    baseline_action: int,
    anchor: Step,
    nuisance: FoldNuisance,
    gamma: float,
    fold_batch: TransitionBatch | None = None,
    minibatch_idx: np.ndarray | None = None,
    minibatch_idx_baseline: np.ndarray | None = None,
) -> float:
    """Contrast pseudo-outcome: the action's pseudo Q-outcome minus the
    baseline action's, with independent minibatch draws per arm."""
    if action == baseline_action:
        return 0.0
    qa = q_pseudo(action, anchor, nuisance, gamma, fold_batch, minibatch_idx)
    q0 = q_pseudo(baseline_action, anchor, nuisance, gamma, fold_batch, minibatch_idx_baseline)
    return qa - q0


def choose_baseline_action(d: Dataset) -> int:
    """Most frequent logged action; ties break to the smallest id."""
    counts = np.bincount(d.transitions.actions, minlength=d.num_actions)
    return int(np.argmax(counts))


@dataclass
class PseudoTable:
    """Per-(trajectory, time, action) pseudo-outcomes, with the anchor
    states kept alongside for the downstream regression and the sampled
    minibatch (trajectory, time) ids kept for auditability."""

    traj: np.ndarray
    t: np.ndarray
    action: np.ndarray
    q_tilde: np.ndarray
    tau_tilde: np.ndarray
    fold: np.ndarray
    states: np.ndarray
    baseline_action: int
    minibatch_ids: list[np.ndarray]

    def __len__(self) -> int:
        return self.traj.shape[0]

    def entries_for_action(self, action: int) -> np.ndarray:
        return np.flatnonzero(self.action == action)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(len(self)):
                fh.write(
                    json.dumps(
                        {
                            "traj": int(self.traj[i]),
                            "t": int(self.t[i]),
                            "a": int(self.action[i]),
                            "q_tilde": float(self.q_tilde[i]),
                            "tau_tilde": float(self.tau_tilde[i]),
                            "fold": int(self.fold[i]),
                        }
                    )
                    + "\n"
                )

    @staticmethod
    def from_jsonl(path, d: Dataset, baseline_action: int) -> "PseudoTable":
        """Rebuild a table from its file, joining anchor states back in
        from the dataset.  Minibatch ids are not persisted."""
        states_by_key = {}
        for tr in d.trajectories:
            for t in range(tr.length):
                states_by_key[(tr.id, t)] = tr.states[t]
        traj, t_, action, q_tilde, tau_tilde, fold, states = [], [], [], [], [], [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                traj.append(obj["traj"])
                t_.append(obj["t"])
                action.append(obj["a"])
                q_tilde.append(obj["q_tilde"])
                tau_tilde.append(obj["tau_tilde"])
                fold.append(obj["fold"])
                states.append(states_by_key[(obj["traj"], obj["t"])])
        n = len(traj)
        return PseudoTable(
            traj=np.asarray(traj, dtype=np.int64),
            t=np.asarray(t_, dtype=np.int64),
            action=np.asarray(action, dtype=np.int64),
            q_tilde=np.asarray(q_tilde),
            tau_tilde=np.asarray(tau_tilde),
            fold=np.asarray(fold, dtype=np.int64),
            states=np.stack(states) if states else np.zeros((0, d.state_dim)),
            baseline_action=baseline_action,
            minibatch_ids=[np.empty((0, 2), dtype=np.int64)] * n,
        )


def _draw_minibatch(rng: np.random.Generator, n: int, exclude: int, size: int) -> np.ndarray:
    """Uniform draw without replacement from {0..n-1} minus the anchor."""
    pick = rng.choice(n - 1, size=min(size, n - 1), replace=False)
    return pick + (pick >= exclude)


def build_pseudo_table(
    d: Dataset,
    folds: FoldAssignment,
    nuisances: NuisanceSet,
    gamma: float,
    minibatch_size: int | None = 256,
    seed: int = 0,
    clip_scale: float | None = 3.0,
    baseline_action: int | None = None,
    threads: int = 1,
) -> PseudoTable:
    """Construct the full pseudo-outcome table, fold by fold.

    Minibatches are drawn inside the anchor's own fold, never containing
    the anchor, with an RNG stream keyed by (seed, trajectory, time,
    action) so the result is independent of chunking or thread count.
    ``minibatch_size=None`` averages over every other same-fold step.
    Pseudo Q-outcomes are clipped to ``clip_scale`` times the maximal
    discounted return magnitude to guard against extreme weights.

    Raises CrossFittingError if a fold's nuisances saw that fold's data.
    """
    gamma = check_gamma(gamma)
    a0 = choose_baseline_action(d) if baseline_action is None else int(baseline_action)
    bound = np.inf
    if clip_scale is not None:
        bound = clip_scale * d.max_abs_reward() / (1.0 - gamma)

    out_traj, out_t, out_a, out_q, out_fold, out_states = [], [], [], [], [], []
    out_mb: list[np.ndarray] = []

    for fold in range(folds.num_folds):
        nuis = nuisances.for_fold(fold)
        if fold in nuis.trained_on_folds:
            raise CrossFittingError(
                f"nuisances for fold {fold} were trained on fold {fold} data"
            )
        ids = folds.ids_in(fold)
        fold_ds = d.subset(ids)
        tb = fold_ds.transitions
        n = len(tb)
        if gamma > 0 and n < 2:
            raise EmptyDataError("fold too small for augmentation minibatches")
        resid = bellman_residuals(nuis.q_model, tb, gamma)
        q_anchor = nuis.q_model.predict_all(tb.states)
        ipw = resid / tb.propensities

        mb_size = 0
        if gamma > 0:
            mb_size = n - 1 if minibatch_size is None else min(minibatch_size, n - 1)

        def entry_chunk(args, _tb=tb, _nuis=nuis, _resid=resid, _n=n, _mb=mb_size):
            action, lo, hi = args
            rows = np.arange(lo, hi)
            if _mb == 0:
                return np.zeros(rows.size), [np.empty((0, 2), dtype=np.int64)] * rows.size
            mbs = []
            for j in rows:
                rng = np.random.default_rng(
                    [seed, int(_tb.traj_ids[j]), int(_tb.times[j]), action]
                )
                mbs.append(_draw_minibatch(rng, _n, j, _mb))
            mb_idx = np.stack(mbs)  # (chunk, k)
            om = _nuis.omega.omega_matrix(
                np.full(rows.size, action),
                _tb.states[rows],
                _tb.states[mb_idx.reshape(-1)].reshape(rows.size, _mb, -1),
                _tb.actions[mb_idx],
                _tb.propensities[mb_idx],
            )
            etas = np.mean(om * _resid[mb_idx], axis=1)
            id_pairs = [
                np.column_stack([_tb.traj_ids[mb], _tb.times[mb]]) for mb in mb_idx
            ]
            return etas, id_pairs

        chunk = 512
        for action in range(d.num_actions):
            jobs = [(action, lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
            results = parallel_map(entry_chunk, jobs, threads)
            etas = np.concatenate([r[0] for r in results])
            mbs = [pair for r in results for pair in r[1]]
            q_vals = q_anchor[:, action] + np.where(tb.actions == action, ipw, 0.0)
            if gamma > 0:
                q_vals = q_vals + gamma / (1.0 - gamma) * etas
            q_vals = np.clip(q_vals, -bound, bound)
            out_traj.append(tb.traj_ids)
            out_t.append(tb.times)
            out_a.append(np.full(n, action))
            out_q.append(q_vals)
            out_fold.append(np.full(n, fold))
            out_states.append(tb.states)
            out_mb.extend(mbs)

    traj = np.concatenate(out_traj)
    t = np.concatenate(out_t)
    action = np.concatenate(out_a)
    q_tilde = np.concatenate(out_q)
    fold = np.concatenate(out_fold)
    states = np.concatenate(out_states)

    # difference against the baseline arm's pseudo-outcome at the same anchor
    key = {}
    for i in range(traj.shape[0]):
        if action[i] == a0:
            key[(int(traj[i]), int(t[i]))] = q_tilde[i]
    tau = np.array(
        [
            0.0 if action[i] == a0 else q_tilde[i] - key[(int(traj[i]), int(t[i]))]
            for i in range(traj.shape[0])
        ]
    )
    return PseudoTable(
        traj=traj,
        t=t,
        action=action,
        q_tilde=q_tilde,
        tau_tilde=tau,
        fold=fold,
        states=states,
        baseline_action=a0,
        minibatch_ids=out_mb,
    )
