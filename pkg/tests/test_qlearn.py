import numpy as np
import pytest

from sealrl.approximator import AdamConfig
from sealrl.core import Dataset, Trajectory, greedy_policy, one_hot
from sealrl.envs import TabularEnv, rollout, ss1_mdp
from sealrl.oracle import value_iteration
from sealrl.qlearn import (
    QTrainConfig,
    dqn_offline,
    double_dqn_offline,
    fqi,
    pinball_loss,
    quantile_fqi,
    quantile_fractions,
    train_q,
)


def ss1_dataset(seed=7, n=200, t=10):
    m = ss1_mdp()
    return rollout(TabularEnv(m), m.behavior_policy(), n, t, seed=seed)


def test_fqi_tabular_matches_value_iteration(chain2, chain2_data):
    cfg = QTrainConfig(variant="fqi", backend="tabular", iterations=60, gamma=0.5)
    q = fqi(chain2_data, cfg, 0.5)
    q_star = value_iteration(chain2, 0.5, tol=1e-12)
    assert np.max(np.abs(q.table - q_star)) <= 1e-6


def test_fqi_gamma_zero_reproduces_rewards(chain2, chain2_data):
    cfg = QTrainConfig(variant="fqi", backend="tabular", iterations=1)
    q = fqi(chain2_data, cfg, 0.0)
    assert np.allclose(q.table, chain2.reward)


def test_fqi_zero_rounds_returns_zero_model(chain2_data):
    cfg = QTrainConfig(variant="fqi", backend="tabular", iterations=0)
    assert np.allclose(fqi(chain2_data, cfg, 0.5).table, 0.0)


def test_fqi_geometric_contraction(chain2, chain2_data):
    cfg = QTrainConfig(
        variant="fqi", backend="tabular", iterations=20, gamma=0.5, track_history=True
    )
    q = fqi(chain2_data, cfg, 0.5)
    q_star = value_iteration(chain2, 0.5, tol=1e-12)
    base = np.max(np.abs(q_star))  # distance of the zero initialization
    for k, table in enumerate(q.history, start=1):
        assert np.max(np.abs(table - q_star)) <= 0.5**k * base + 1e-12


def test_fqi_greedy_policy_is_optimal(chain2_data):
    cfg = QTrainConfig(variant="fqi", backend="tabular", iterations=40, gamma=0.5)
    pi = greedy_policy(fqi(chain2_data, cfg, 0.5))
    assert pi.act(one_hot([0, 1], 2)).tolist() == [1, 1]


def test_fqi_bit_reproducible():
    d = ss1_dataset()
    cfg = QTrainConfig(variant="fqi", backend="net", iterations=3, hidden=(8,), seed=5,
                       net_epochs_per_round=5)
    x = np.array([[1.0]])
    a = fqi(d, cfg, 0.5).predict_all(x)
    b = fqi(d, cfg, 0.5).predict_all(x)
    assert np.array_equal(a, b)


def test_empty_datasets_cannot_be_built():
    # trainers' no-data contract is enforced at dataset construction
    from sealrl.errors import DataError

    with pytest.raises(DataError):
        Dataset([], num_actions=2, state_dim=2)


def test_dqn_learns_ss1_values():
    cfg = QTrainConfig(
        variant="dqn", backend="net", steps=5000, minibatch_size=32, gamma=0.5,
        hidden=(64, 64), target_sync=200, seed=3,
    )
    q = dqn_offline(ss1_dataset(), cfg)
    vals = q.predict_all(np.array([[1.0]]))[0]
    assert abs(vals[0] - 1.0) <= 0.1
    assert abs(vals[1] - 2.0) <= 0.1


def test_dqn_lr_zero_keeps_parameters():
    d = ss1_dataset(n=20, t=5)
    cfg = QTrainConfig(
        variant="dqn", backend="net", steps=10, gamma=0.5, hidden=(8,), seed=1,
        optimizer=AdamConfig(lr=0.0),
    )
    from sealrl.approximator import NetQ

    fresh = NetQ.fresh(1, 2, (8,), 1)
    trained = dqn_offline(d, cfg)
    for a, b in zip(fresh.net.params(), trained.net.params()):
        assert np.array_equal(a, b)


def test_dqn_target_sync_every_step():
    d = ss1_dataset(n=20, t=5)
    cfg = QTrainConfig(
        variant="dqn", backend="net", steps=17, gamma=0.5, hidden=(8,), target_sync=1, seed=2
    )
    q = dqn_offline(d, cfg)
    for live, target in zip(q.net.params(), q.target_params):
        assert np.array_equal(live, target)


def test_double_dqn_target_equals_dqn_target_right_after_sync(chain2_data):
    # with identical online and target parameters the action chosen by
    # the online net is also the argmax of the target net
    from sealrl.approximator import NetQ

    q = NetQ.fresh(2, 2, (8,), seed=0)
    tb = chain2_data.transitions
    q_next = q.predict_all(tb.next_states)
    dqn_target = tb.rewards + 0.5 * q_next.max(axis=1)
    pick = np.argmax(q_next, axis=1)
    double_target = tb.rewards + 0.5 * q_next[np.arange(len(tb)), pick]
    assert np.allclose(dqn_target, double_target)


def test_double_dqn_single_action_matches_dqn():
    m = ss1_mdp()
    p = np.ones((1, 1, 1))
    from sealrl.oracle import TabularMDP

    single = TabularMDP(p, np.array([[1.0]]), np.array([[1.0]]))
    d = rollout(TabularEnv(single), single.behavior_policy(), 30, 5, seed=4)
    cfg = QTrainConfig(variant="dqn", backend="net", steps=200, gamma=0.5, hidden=(8,), seed=9)
    a = dqn_offline(d, cfg).predict_all(np.array([[1.0]]))
    b = double_dqn_offline(d, cfg).predict_all(np.array([[1.0]]))
    assert np.array_equal(a, b)


def test_double_dqn_learns_ss1_values():
    cfg = QTrainConfig(
        variant="double_dqn", backend="net", steps=5000, minibatch_size=32, gamma=0.5,
        hidden=(64, 64), target_sync=200, seed=3,
    )
    q = double_dqn_offline(ss1_dataset(), cfg)
    vals = q.predict_all(np.array([[1.0]]))[0]
    assert abs(vals[0] - 1.0) <= 0.1
    assert abs(vals[1] - 2.0) <= 0.1


def test_quantile_fractions_are_midpoints():
    assert np.allclose(quantile_fractions(2), [0.25, 0.75])
    assert np.allclose(quantile_fractions(1), [0.5])


def test_quantile_fqi_degenerate_returns_match_fqi(chain2_data):
    cfg_q = QTrainConfig(
        variant="quantile", backend="tabular", iterations=40, gamma=0.5, num_quantiles=5
    )
    quant = quantile_fqi(chain2_data, cfg_q)
    cfg_f = QTrainConfig(variant="fqi", backend="tabular", iterations=40, gamma=0.5)
    plain = fqi(chain2_data, cfg_f, 0.5)
    # deterministic rewards and transitions: the return distribution is a
    # point mass, so all quantiles coincide
    assert np.max(quant.quantiles.std(axis=2)) <= 1e-9
    assert np.max(np.abs(quant.table - plain.table)) <= 1e-3


def test_quantile_single_level_is_median_regression():
    rng = np.random.default_rng(0)
    n = 800
    actions = rng.integers(0, 2, size=n).tolist()
    noise = rng.standard_normal(n) * 0.3  # symmetric noise: median == mean
    trajs = []
    for i in range(n):
        states = one_hot([0, 0], 1)
        trajs.append(Trajectory(i, states, [actions[i]], [actions[i] + noise[i]], [0.5]))
    d = Dataset(trajs, num_actions=2, state_dim=1)
    cfg_q = QTrainConfig(
        variant="quantile", backend="tabular", iterations=40, gamma=0.5, num_quantiles=1
    )
    cfg_f = QTrainConfig(variant="fqi", backend="tabular", iterations=40, gamma=0.5)
    quant = quantile_fqi(d, cfg_q)
    plain = fqi(d, cfg_f, 0.5)
    assert np.max(np.abs(quant.table - plain.table)) <= 0.1


def test_pinball_loss_minimized_at_sample_quantile():
    samples = np.array([1.0, 2.0, 3.0, 7.0, 9.0])  # odd count: unique median
    med = 3.0
    at_med = pinball_loss(med, samples, 0.5)
    assert pinball_loss(med + 0.5, samples, 0.5) > at_med
    assert pinball_loss(med - 0.5, samples, 0.5) > at_med


def test_quantile_net_backend_runs(chain2_data):
    cfg = QTrainConfig(
        variant="quantile", backend="net", steps=300, gamma=0.5, num_quantiles=3,
        hidden=(16,), target_sync=50, seed=0,
    )
    q = quantile_fqi(chain2_data, cfg)
    out = q.predict_all(one_hot([0, 1], 2))
    assert out.shape == (2, 2)
    assert np.all(np.isfinite(out))


def test_train_q_dispatch(chain2_data):
    cfg = QTrainConfig(variant="fqi", backend="tabular", iterations=5, gamma=0.5)
    assert train_q(chain2_data, cfg).table.shape == (2, 2)
    with pytest.raises(ValueError):
        train_q(chain2_data, QTrainConfig(variant="nope"))


def test_dqn_bit_reproducible():
    d = ss1_dataset(n=30, t=5)
    cfg = QTrainConfig(variant="dqn", backend="net", steps=60, gamma=0.5, hidden=(8,), seed=4)
    x = np.array([[1.0]])
    assert np.array_equal(dqn_offline(d, cfg).predict_all(x), dqn_offline(d, cfg).predict_all(x))


def test_quantile_net_bit_reproducible():
    d = ss1_dataset(n=30, t=5)
    cfg = QTrainConfig(
        variant="quantile", backend="net", steps=60, gamma=0.5, hidden=(8,),
        num_quantiles=3, seed=4,
    )
    x = np.array([[1.0]])
    assert np.array_equal(
        quantile_fqi(d, cfg).predict_all(x), quantile_fqi(d, cfg).predict_all(x)
    )
