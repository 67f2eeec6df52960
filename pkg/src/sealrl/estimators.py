"""Scikit-learn style front ends.

Three estimators wrap the functional pipeline so it composes with the
wider ecosystem (``get_params`` / ``set_params`` / ``clone`` work as
usual); fitted attributes carry trailing underscores.

* :class:`QPolicyLearner` fits an initial Q-model by any supported
  variant and predicts greedy actions.
* :class:`SEALPolicyLearner` runs the full five-stage procedure (fold
  split, per-fold Q-estimation, per-fold ratio estimation, cross-fitted
  pseudo-outcomes, contrast regression) and predicts actions from the
  learned contrast.
* :class:`FittedQEvaluator` estimates the value of a fixed policy from
  logged data.

``fit`` takes a :class:`~sealrl.core.Dataset` (the natural sample unit
here is a trajectory, not a feature row); ``predict`` takes a 2-d array
of states.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .advantage import ContrastModel, fit_contrast, seal_policy
from .approximator import AdamConfig, RegressionConfig
from .core import Dataset, Policy, greedy_policy, split_folds, validate_dataset
from .errors import DataError
from .ope import FQEConfig, fqe
from .pseudo import (
    ConstantOmega,
    FoldNuisance,
    LearnedOmega,
    NuisanceSet,
    build_pseudo_table,
    choose_baseline_action,
)
from .qlearn import QTrainConfig, train_q
from .ratio import KernelSpec, RatioTrainConfig, train_ratio

__all__ = ["QPolicyLearner", "SEALPolicyLearner", "FittedQEvaluator", "check_dataset", "check_states"]


def check_dataset(X) -> Dataset:
    """Validate a Dataset argument the way sklearn validates arrays."""
    if not isinstance(X, Dataset):
        raise TypeError("X must be a sealrl.core.Dataset of logged trajectories")
    report = validate_dataset(X)
    if not report.ok:
        raise DataError(f"dataset failed validation: {report}")
    return X


def check_states(states, state_dim: int) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if arr.shape[1] != state_dim:
        raise ValueError(f"states have width {arr.shape[1]}, expected {state_dim}")
    return arr


class QPolicyLearner(BaseEstimator):
    """Initial Q-estimation plus greedy policy extraction."""

    def __init__(
        self,
        variant: str = "fqi",
        backend: str = "tabular",
        gamma: float = 0.5,
        iterations: int = 60,
        steps: int = 2000,
        minibatch_size: int = 32,
        target_sync: int = 200,
        num_quantiles: int = 11,
        hidden: tuple[int, ...] = (64, 64),
        learning_rate: float = 1e-3,
        seed: int = 0,
    ):
        self.variant = variant
        self.backend = backend
        self.gamma = gamma
        self.iterations = iterations
        self.steps = steps
        self.minibatch_size = minibatch_size
        self.target_sync = target_sync
        self.num_quantiles = num_quantiles
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.seed = seed

    def _config(self, seed_offset: int = 0) -> QTrainConfig:
        return QTrainConfig(
            variant=self.variant,
            backend=self.backend,
            iterations=self.iterations,
            steps=self.steps,
            minibatch_size=self.minibatch_size,
            target_sync=self.target_sync,
            gamma=self.gamma,
            num_quantiles=self.num_quantiles,
            hidden=tuple(self.hidden),
            optimizer=AdamConfig(lr=self.learning_rate),
            seed=self.seed + seed_offset,
        )

    def fit(self, X: Dataset, y=None) -> "QPolicyLearner":
        d = check_dataset(X)
        self.state_dim_ = d.state_dim
        self.q_model_ = train_q(d, self._config())
        self.policy_ = greedy_policy(self.q_model_)
        return self

    def q_values(self, states) -> np.ndarray:
        return self.q_model_.predict_all(check_states(states, self.state_dim_))

    def predict(self, states) -> np.ndarray:
        return self.policy_.act(check_states(states, self.state_dim_))


class SEALPolicyLearner(BaseEstimator):
    """Cross-fitted doubly-robust contrast learning over logged data.

    The fitted object exposes the fold assignment, per-fold nuisances,
    pseudo-outcome table, contrast model, and final policy.
    """

    def __init__(
        self,
        gamma: float = 0.5,
        n_folds: int = 2,
        q_variant: str = "fqi",
        q_backend: str = "tabular",
        q_iterations: int = 60,
        q_steps: int = 2000,
        q_minibatch_size: int = 32,
        q_target_sync: int = 200,
        q_num_quantiles: int = 11,
        q_hidden: tuple[int, ...] = (64, 64),
        q_learning_rate: float = 1e-3,
        ratio_steps: int = 800,
        ratio_batch_pairs: int = 64,
        ratio_hidden: tuple[int, ...] = (32, 32),
        ratio_learning_rate: float = 2e-3,
        ratio_bandwidth: float | None = None,
        pseudo_minibatch: int = 256,
        pseudo_clip_scale: float | None = 3.0,
        contrast_backend: str = "net",
        contrast_hidden: tuple[int, ...] = (64, 64),
        contrast_epochs: int = 100,
        contrast_batch_size: int = 64,
        contrast_learning_rate: float = 1e-3,
        baseline_action: int | None = None,
        threads: int = 1,
        seed: int = 0,
    ):
        self.gamma = gamma
        self.n_folds = n_folds
        self.q_variant = q_variant
        self.q_backend = q_backend
        self.q_iterations = q_iterations
        self.q_steps = q_steps
        self.q_minibatch_size = q_minibatch_size
        self.q_target_sync = q_target_sync
        self.q_num_quantiles = q_num_quantiles
        self.q_hidden = q_hidden
        self.q_learning_rate = q_learning_rate
        self.ratio_steps = ratio_steps
        self.ratio_batch_pairs = ratio_batch_pairs
        self.ratio_hidden = ratio_hidden
        self.ratio_learning_rate = ratio_learning_rate
        self.ratio_bandwidth = ratio_bandwidth
        self.pseudo_minibatch = pseudo_minibatch
        self.pseudo_clip_scale = pseudo_clip_scale
        self.contrast_backend = contrast_backend
        self.contrast_hidden = contrast_hidden
        self.contrast_epochs = contrast_epochs
        self.contrast_batch_size = contrast_batch_size
        self.contrast_learning_rate = contrast_learning_rate
        self.baseline_action = baseline_action
        self.threads = threads
        self.seed = seed

    def fit(self, X: Dataset, y=None) -> "SEALPolicyLearner":
        d = check_dataset(X)
        self.state_dim_ = d.state_dim
        self.baseline_action_ = (
            choose_baseline_action(d) if self.baseline_action is None else self.baseline_action
        )
        self.folds_ = split_folds(d, self.n_folds, seed=self.seed)

        q_template = QPolicyLearner(
            variant=self.q_variant,
            backend=self.q_backend,
            gamma=self.gamma,
            iterations=self.q_iterations,
            steps=self.q_steps,
            minibatch_size=self.q_minibatch_size,
            target_sync=self.q_target_sync,
            num_quantiles=self.q_num_quantiles,
            hidden=self.q_hidden,
            learning_rate=self.q_learning_rate,
        )
        ratio_cfg = RatioTrainConfig(
            steps=self.ratio_steps,
            batch_pairs=self.ratio_batch_pairs,
            hidden=tuple(self.ratio_hidden),
            optimizer=AdamConfig(lr=self.ratio_learning_rate),
        )
        kernel = None if self.ratio_bandwidth is None else KernelSpec(self.ratio_bandwidth)

        per_fold: dict[int, FoldNuisance] = {}
        for fold in range(self.n_folds):
            train_ids = self.folds_.ids_outside(fold)
            trained_on = frozenset(
                k for k in range(self.n_folds) if k != fold
            )
            d_train = d.subset(train_ids)
            cfg = q_template._config(seed_offset=self.seed + fold)
            q_model = train_q(d_train, cfg)
            policy = greedy_policy(q_model)
            if self.gamma > 0:
                ratio_model = train_ratio(
                    d_train, policy, kernel, ratio_cfg, seed=self.seed + 101 + fold,
                    gamma=self.gamma,
                )
                omega = LearnedOmega(ratio_model, policy)
            else:
                # discount zero: the augmentation term has weight zero
                omega = ConstantOmega(0.0)
            per_fold[fold] = FoldNuisance(q_model, policy, omega, trained_on)
        self.nuisances_ = NuisanceSet(per_fold)

        self.pseudo_table_ = build_pseudo_table(
            d,
            self.folds_,
            self.nuisances_,
            gamma=self.gamma,
            minibatch_size=self.pseudo_minibatch,
            seed=self.seed + 202,
            clip_scale=self.pseudo_clip_scale,
            baseline_action=self.baseline_action_,
            threads=self.threads,
        )
        contrast_cfg = RegressionConfig(
            backend=self.contrast_backend,
            hidden=tuple(self.contrast_hidden),
            epochs=self.contrast_epochs,
            batch_size=self.contrast_batch_size,
            optimizer=AdamConfig(lr=self.contrast_learning_rate),
        )
        self.contrast_model_: ContrastModel = fit_contrast(
            self.pseudo_table_, contrast_cfg, seed=self.seed + 303
        )
        self.policy_: Policy = seal_policy(self.contrast_model_)
        return self

    def contrast_values(self, states) -> np.ndarray:
        return self.contrast_model_.predict(check_states(states, self.state_dim_))

    def predict(self, states) -> np.ndarray:
        return self.policy_.act(check_states(states, self.state_dim_))


class FittedQEvaluator(BaseEstimator):
    """Fitted-Q evaluation of a fixed policy on logged data."""

    def __init__(
        self,
        rounds: int = 60,
        gamma: float = 0.5,
        backend: str = "tabular",
        hidden: tuple[int, ...] = (64, 64),
        epochs_per_round: int = 40,
        minibatch_size: int = 64,
        learning_rate: float = 1e-3,
        seed: int = 0,
    ):
        self.rounds = rounds
        self.gamma = gamma
        self.backend = backend
        self.hidden = hidden
        self.epochs_per_round = epochs_per_round
        self.minibatch_size = minibatch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X: Dataset, policy: Policy) -> "FittedQEvaluator":
        d = check_dataset(X)
        self.state_dim_ = d.state_dim
        cfg = FQEConfig(
            backend=self.backend,
            hidden=tuple(self.hidden),
            minibatch_size=self.minibatch_size,
            epochs_per_round=self.epochs_per_round,
            optimizer=AdamConfig(lr=self.learning_rate),
        )
        self.result_ = fqe(d, policy, self.rounds, self.gamma, cfg, seed=self.seed)
        self.q_model_ = self.result_.q_model
        return self

    def value(self, states) -> np.ndarray:
        return self.result_.value(check_states(states, self.state_dim_))

    def initial_state_value(self, X: Dataset) -> float:
        """Average estimated value over the dataset's initial states."""
        return float(np.mean(self.value(X.initial_states())))
