import numpy as np
import pytest
from sklearn.base import clone

from sealrl.core import one_hot
from sealrl.envs import TabularEnv, rollout
from sealrl.errors import DataError
from sealrl.estimators import FittedQEvaluator, QPolicyLearner, SEALPolicyLearner
from sealrl.oracle import policy_q, value_iteration


def chain2_logged(chain2, n=40, t=8, seed=0):
    return rollout(TabularEnv(chain2), chain2.behavior_policy(), n, t, seed=seed)


def test_q_policy_learner_fits_chain2(chain2):
    d = chain2_logged(chain2)
    learner = QPolicyLearner(variant="fqi", backend="tabular", gamma=0.5, iterations=60)
    learner.fit(d)
    states = one_hot([0, 1], 2)
    assert np.allclose(learner.q_values(states), value_iteration(chain2, 0.5, 1e-12), atol=1e-6)
    assert learner.predict(states).tolist() == [1, 1]


def test_q_policy_learner_get_set_params_round_trip():
    learner = QPolicyLearner(gamma=0.9, iterations=7)
    params = learner.get_params()
    assert params["gamma"] == 0.9
    cloned = clone(learner)
    assert cloned.get_params() == params


def test_seal_learner_end_to_end_chain2(chain2):
    d = chain2_logged(chain2, n=60, t=10)
    learner = SEALPolicyLearner(
        gamma=0.5,
        n_folds=2,
        q_variant="fqi",
        q_backend="tabular",
        q_iterations=60,
        ratio_steps=200,
        ratio_batch_pairs=32,
        pseudo_minibatch=64,
        contrast_backend="tabular",
        seed=1,
    )
    learner.fit(d)
    states = one_hot([0, 1], 2)
    # both chain states prefer the paying arm
    assert learner.predict(states).tolist() == [1, 1]
    tau = learner.contrast_values(states)
    assert np.allclose(tau[:, learner.baseline_action_], 0.0)
    assert len(learner.pseudo_table_) == 60 * 10 * 2


def test_seal_learner_gamma_zero_skips_ratio(chain2):
    d = chain2_logged(chain2, n=30, t=5)
    learner = SEALPolicyLearner(
        gamma=0.0,
        q_variant="fqi",
        q_backend="tabular",
        q_iterations=1,
        contrast_backend="tabular",
        seed=0,
    )
    learner.fit(d)
    from sealrl.pseudo import ConstantOmega

    for fold in range(2):
        assert isinstance(learner.nuisances_.for_fold(fold).omega, ConstantOmega)


def test_seal_learner_cross_fitting_provenance(chain2):
    d = chain2_logged(chain2, n=20, t=4)
    learner = SEALPolicyLearner(
        gamma=0.5, q_variant="fqi", q_backend="tabular", q_iterations=10,
        ratio_steps=30, pseudo_minibatch=16, contrast_backend="tabular", seed=3,
    )
    learner.fit(d)
    for fold in range(2):
        assert fold not in learner.nuisances_.for_fold(fold).trained_on_folds


def test_seal_learner_deterministic(chain2):
    d = chain2_logged(chain2, n=16, t=4)
    kw = dict(
        gamma=0.5, q_variant="fqi", q_backend="tabular", q_iterations=10,
        ratio_steps=30, pseudo_minibatch=8, contrast_backend="tabular", seed=5,
    )
    a = SEALPolicyLearner(**kw).fit(d)
    b = SEALPolicyLearner(**kw).fit(d)
    assert np.array_equal(a.pseudo_table_.tau_tilde, b.pseudo_table_.tau_tilde)
    states = one_hot([0, 1], 2)
    assert np.array_equal(a.contrast_values(states), b.contrast_values(states))


def test_seal_learner_rejects_invalid_dataset(chain2):
    d = chain2_logged(chain2, n=4, t=3)
    d.trajectories[0].propensities.setflags(write=True)
    d.trajectories[0].propensities[0] = 0.0
    learner = SEALPolicyLearner(q_backend="tabular", contrast_backend="tabular")
    with pytest.raises(DataError):
        learner.fit(d)


def test_fitted_q_evaluator_matches_oracle(chain2, pi_always_one):
    d = chain2_logged(chain2, n=50, t=10)
    ev = FittedQEvaluator(rounds=60, gamma=0.5, backend="tabular").fit(d, pi_always_one)
    q_pi = policy_q(chain2, pi_always_one, 0.5)
    states = one_hot([0, 1], 2)
    assert np.max(np.abs(ev.value(states) - q_pi[:, 1])) <= 1e-6
    assert abs(ev.initial_state_value(d) - 2.0) <= 1e-6


def test_fitted_q_evaluator_requires_dataset(pi_always_one):
    with pytest.raises(TypeError):
        FittedQEvaluator().fit(np.zeros((3, 2)), pi_always_one)


def test_seal_learner_margin_env_gamma_zero_contrast_accuracy():
    # fully learned pipeline at discount zero; the closed-form contrast
    # of the margin family is the oracle (MSE bar from a pilot run)
    from sealrl.advantage import contrast_mse
    from sealrl.envs import MarginEnv, MarginEnvSpec
    from sealrl.core import UniformPolicy

    env = MarginEnv(MarginEnvSpec(alpha=2.0, noise_scale=0.1))
    data = rollout(env, UniformPolicy(2), 100, 20, seed=301)
    learner = SEALPolicyLearner(
        gamma=0.0, n_folds=2, q_variant="fqi", q_backend="net", q_iterations=2,
        q_hidden=(32, 32), contrast_backend="net", contrast_hidden=(32, 32),
        contrast_epochs=80, seed=1,
    ).fit(data)
    states = data.transitions.states
    tau_true = env.contrast_table(states, learner.baseline_action_)
    mse = contrast_mse(learner.contrast_model_, tau_true, states)
    assert mse <= 0.005
