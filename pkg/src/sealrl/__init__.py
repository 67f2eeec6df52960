"""Statistically efficient advantage learning for offline RL.

Offline policy optimization from logged trajectories: initial Q-models,
visitation density-ratio estimation, cross-fitted doubly-robust pseudo
outcomes for the optimal contrast, least-squares contrast regression,
and policy evaluation, with exact tabular oracles backing every piece.
"""

__version__ = "0.1.0"

from .advantage import ContrastModel, contrast_from_q, contrast_mse, fit_contrast, seal_policy
from .approximator import (
    AdamConfig,
    DenseNet,
    LinearQ,
    NetQ,
    QModel,
    RegressionConfig,
    TabularQ,
    fit_regression,
)
from .core import (
    Dataset,
    DeterministicPolicy,
    EpsilonGreedyPolicy,
    FoldAssignment,
    Policy,
    Step,
    StochasticPolicy,
    TablePolicy,
    Trajectory,
    UniformPolicy,
    greedy_policy,
    split_folds,
    validate_dataset,
)
from .envs import (
    MarginEnv,
    MarginEnvSpec,
    SmoothEnv,
    SmoothEnvSpec,
    TabularEnv,
    chain2_mdp,
    gen_decomposable_tabular,
    gen_random_tabular,
    glycemic_reward,
    ingest_jsonl,
    insulin_to_action,
    margin_contrast,
    rollout,
    ss1_mdp,
)
from .estimators import FittedQEvaluator, QPolicyLearner, SEALPolicyLearner
from .ope import FQEConfig, fqe, value_of_policy_mc
from .oracle import (
    TabularMDP,
    discounted_visitation,
    exact_contrast,
    exact_density_ratio,
    exact_state_density_ratio,
    policy_q,
    stationary_distribution,
    value_iteration,
)
from .pseudo import (
    ConstantOmega,
    ExactOmega,
    FoldNuisance,
    LearnedOmega,
    NuisanceSet,
    PseudoTable,
    build_pseudo_table,
    choose_baseline_action,
    q_pseudo,
    tau_pseudo,
)
from .qlearn import QTrainConfig, dqn_offline, double_dqn_offline, fqi, quantile_fqi, train_q
from .ratio import (
    KernelSpec,
    RatioModel,
    RatioTrainConfig,
    delta_residual,
    exact_expectation_mmd_loss,
    mmd_loss,
    ratio_predict,
    train_ratio,
)

__all__ = [name for name in dir() if not name.startswith("_")]
