"""Final contrast regression and policy extraction.

One scalar regressor per non-baseline action is fit by least squares to
that action's contrast pseudo-outcomes; the baseline's contrast is zero
by construction, so the extracted policy is the row-wise argmax of the
predicted contrast table with the baseline column pinned at zero.
"""

from __future__ import annotations

import numpy as np

from .approximator import RegressionConfig, fit_regression
from .core import DeterministicPolicy, Policy
from .errors import DataError, EmptyDataError
from .pseudo import PseudoTable

__all__ = [
    "ContrastModel",
    "fit_contrast",
    "contrast_from_q",
    "seal_policy",
    "contrast_mse",
]


class ContrastModel:
    """Per-action contrast regressors against a fixed baseline action."""

    def __init__(self, models: dict[int, object], baseline_action: int, num_actions: int):
        self.models = dict(models)
        self.baseline_action = int(baseline_action)
        self.num_actions = int(num_actions)

    def predict(self, states: np.ndarray) -> np.ndarray:
        """Contrast table (n, num_actions); the baseline column is zero."""
        states = np.atleast_2d(states)
        out = np.zeros((states.shape[0], self.num_actions))
        for a, model in self.models.items():
            out[:, a] = model.predict(states)
        return out

    def to_dict(self) -> dict:
        from .approximator import model_to_dict

        return {
            "kind": "contrast",
            "baseline_action": self.baseline_action,
            "num_actions": self.num_actions,
            "models": {str(a): model_to_dict(m) for a, m in sorted(self.models.items())},
        }

    @staticmethod
    def from_dict(obj: dict) -> "ContrastModel":
        from .approximator import model_from_dict

        models = {int(a): model_from_dict(m) for a, m in obj["models"].items()}
        return ContrastModel(models, int(obj["baseline_action"]), int(obj["num_actions"]))


class QContrast:
    """Plug-in contrast read directly off a Q-model: Q(a, s) - Q(a0, s)."""

    def __init__(self, q_model, baseline_action: int):
        self.q_model = q_model
        self.baseline_action = int(baseline_action)
        self.num_actions = q_model.num_actions

    def predict(self, states: np.ndarray) -> np.ndarray:
        q = self.q_model.predict_all(states)
        return q - q[:, [self.baseline_action]]


def contrast_from_q(q_model, baseline_action: int) -> QContrast:
    return QContrast(q_model, baseline_action)


def fit_contrast(pt: PseudoTable, cfg: RegressionConfig, seed: int = 0) -> ContrastModel:
    """Regress each non-baseline action's contrast targets on the anchor
    states.  Fits are independent per action and seeded per action."""
    if len(pt) == 0:
        raise EmptyDataError("pseudo table is empty")
    num_actions = int(pt.action.max()) + 1
    models: dict[int, object] = {}
    for a in range(num_actions):
        if a == pt.baseline_action:
            continue
        rows = pt.entries_for_action(a)
        if rows.size == 0:
            raise DataError(f"pseudo table has no entries for action {a}")
        models[a] = fit_regression(
            pt.states[rows], pt.tau_tilde[rows], cfg, seed=seed + a
        )
    return ContrastModel(models, pt.baseline_action, num_actions)


def seal_policy(tau_hat, baseline_action: int | None = None) -> Policy:
    """Greedy policy of the contrast table (baseline column fixed at zero);
    ties break to the smallest action id."""
    if baseline_action is not None and baseline_action != tau_hat.baseline_action:
        raise ValueError("baseline action disagrees with the contrast model")

    def _act(states: np.ndarray) -> np.ndarray:
        return np.argmax(tau_hat.predict(states), axis=1)

    return DeterministicPolicy(_act, tau_hat.num_actions)


def contrast_mse(
    tau_hat,
    oracle_tau,
    eval_states: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """Weighted mean squared contrast error over states and non-baseline
    actions.  ``oracle_tau`` is an (n, num_actions) table aligned with
    ``eval_states`` or a callable producing one."""
    eval_states = np.atleast_2d(eval_states)
    if eval_states.shape[0] == 0:
        raise EmptyDataError("no evaluation states")
    truth = oracle_tau(eval_states) if callable(oracle_tau) else np.asarray(oracle_tau)
    pred = tau_hat.predict(eval_states)
    a0 = tau_hat.baseline_action
    keep = [a for a in range(pred.shape[1]) if a != a0]
    err2 = (pred[:, keep] - truth[:, keep]) ** 2
    if weights is None:
        return float(np.mean(err2))
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    return float(np.sum(w[:, None] * err2) / len(keep))
