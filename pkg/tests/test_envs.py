import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sealrl.core import UniformPolicy, save_dataset_jsonl, validate_dataset
from sealrl.envs import (
    MarginEnvSpec,
    SmoothEnv,
    SmoothEnvSpec,
    TabularEnv,
    gen_decomposable_tabular,
    gen_random_tabular,
    glycemic_reward,
    ingest_jsonl,
    insulin_to_action,
    margin_contrast,
    rollout,
)
from sealrl.errors import DataError
from sealrl.oracle import exact_contrast, stationary_distribution


def test_gen_random_tabular_rows_stochastic():
    m = gen_random_tabular(7, 3, seed=0)
    assert np.max(np.abs(m.transition.sum(axis=2) - 1.0)) <= 1e-12


def test_gen_random_tabular_deterministic():
    a = gen_random_tabular(5, 2, seed=42)
    b = gen_random_tabular(5, 2, seed=42)
    assert np.array_equal(a.transition, b.transition)
    assert np.array_equal(a.reward, b.reward)


def test_gen_random_tabular_chains_are_ergodic():
    for seed in range(20):
        m = gen_random_tabular(50, 2, seed=seed)
        p = stationary_distribution(m)
        assert abs(p.sum() - 1.0) <= 1e-10


def test_gen_decomposable_tabular_is_valid_mdp():
    mix = 0.3
    m = gen_decomposable_tabular(20, 2, seed=1, mix_weight=mix)
    assert np.max(np.abs(m.transition.sum(axis=2) - 1.0)) <= 1e-12
    # the shared kernel cancels in cross-action differences, so rows of
    # different actions can differ by at most the action-specific mass
    diff = np.abs(m.transition[:, 0, :] - m.transition[:, 1, :]).sum(axis=1)
    assert np.all(diff <= 2 * mix + 1e-12)
    assert np.any(diff > 0.01)  # the action part actually moves mass


def test_smooth_env_contrast_cancels_shared_reward():
    env = SmoothEnv(SmoothEnvSpec())
    states = np.linspace(0, 1, 50)[:, None]
    tau = env.contrast_table(states, baseline_action=0)
    direct = env.mean_reward(1, states) - env.mean_reward(0, states)
    assert np.allclose(tau[:, 1], direct, atol=1e-12)
    assert np.allclose(tau[:, 0], 0.0)


def test_smooth_env_matches_fine_discretization_oracle():
    """On a fine lattice with independent transitions, the exact optimal
    contrast equals the action-reward difference up to lattice error."""
    env = SmoothEnv(SmoothEnvSpec(noise_scale=0.0))
    n = 200
    centers = (np.arange(n) + 0.5)[:, None] / n
    p = np.tile(np.full(n, 1.0 / n), (n, 2, 1))  # state-independent jumps
    r = np.stack([env.mean_reward(a, centers) for a in (0, 1)], axis=1)
    from sealrl.oracle import TabularMDP

    m = TabularMDP(p, r, np.full((n, 2), 0.5))
    tau = exact_contrast(m, 0.5, a0=0)
    assert np.max(np.abs(tau[:, 1] - env.contrast_table(centers)[:, 1])) <= 1e-8


def test_margin_contrast_values():
    spec = MarginEnvSpec(alpha=2.0)
    assert margin_contrast(spec, 0.25) == pytest.approx(0.5)
    assert margin_contrast(spec, 0.0) == 0.0
    assert margin_contrast(spec, -0.7) == 0.0


def test_margin_small_contrast_set_has_measure_eps_alpha():
    # the set {0 < tau <= eps} is (0, eps^alpha], so its length is eps^alpha
    spec = MarginEnvSpec(alpha=2.0)
    eps = 0.1
    s = np.linspace(-1, 1, 2_000_001)
    tau = margin_contrast(spec, s)
    frac = np.mean((tau > 0) & (tau <= eps))
    assert frac * 2.0 == pytest.approx(eps**2, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False))
def test_margin_contrast_nonnegative_and_monotone(s):
    spec = MarginEnvSpec(alpha=1.5)
    v = margin_contrast(spec, s)
    assert v >= 0.0
    assert margin_contrast(spec, min(s + 0.1, 1.0)) >= v


def test_rollout_shapes(chain2):
    d = rollout(TabularEnv(chain2), UniformPolicy(2), 7, 5, seed=0)
    assert d.num_trajectories == 7
    for tr in d.trajectories:
        assert tr.length == 5
        assert tr.states.shape == (6, 2)


def test_rollout_logged_propensities_match_behavior(chain2):
    pi = UniformPolicy(2)
    d = rollout(TabularEnv(chain2), pi, 5, 6, seed=1)
    for tr in d.trajectories:
        assert np.allclose(tr.propensities, 0.5)


def test_rollout_mean_reward_ss1():
    from sealrl.envs import ss1_mdp

    m = ss1_mdp()
    d = rollout(TabularEnv(m), UniformPolicy(2), 400, 10, seed=3)
    rewards = d.transitions.rewards
    se = rewards.std(ddof=1) / np.sqrt(rewards.size)
    assert abs(rewards.mean() - 0.5) <= 3 * se


def test_rollout_deterministic(chain2):
    a = rollout(TabularEnv(chain2), UniformPolicy(2), 4, 6, seed=9)
    b = rollout(TabularEnv(chain2), UniformPolicy(2), 4, 6, seed=9)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert np.array_equal(ta.states, tb.states)
        assert np.array_equal(ta.actions, tb.actions)


def test_glycemic_reward_band_and_branches():
    assert glycemic_reward(100.0) == 0.0
    assert glycemic_reward(50.0) == pytest.approx(-30.0)
    assert glycemic_reward(80.0) == 0.0
    assert glycemic_reward(140.0) == 0.0
    assert glycemic_reward(141.0) == pytest.approx(-1.0 / 30.0)
    with pytest.raises(ValueError):
        glycemic_reward(0.0)


@settings(max_examples=80, deadline=None)
@given(st.floats(min_value=1.0, max_value=500.0, allow_nan=False))
def test_glycemic_reward_nonpositive_everywhere(g):
    r = glycemic_reward(g)
    assert r <= 0.0
    if 80.0 <= g <= 140.0:
        assert r == 0.0
    else:
        assert r < 0.0


def test_insulin_to_action_buckets():
    assert insulin_to_action(0.0) == 0
    assert insulin_to_action(5.0) == 2
    assert insulin_to_action(13.0) == 4
    assert insulin_to_action(4.0) == 1
    assert insulin_to_action(12.0) == 3
    assert insulin_to_action(0.5) == 1
    with pytest.raises(ValueError):
        insulin_to_action(-1.0)


def test_ingest_round_trip(tmp_path, chain2):
    d = rollout(TabularEnv(chain2), UniformPolicy(2), 6, 4, seed=2)
    path = tmp_path / "d.jsonl"
    save_dataset_jsonl(d, path)
    again = ingest_jsonl(path)
    assert validate_dataset(again).ok
    path2 = tmp_path / "d2.jsonl"
    save_dataset_jsonl(again, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_ingest_rejects_bad_propensity(tmp_path, chain2):
    d = rollout(TabularEnv(chain2), UniformPolicy(2), 2, 3, seed=0)
    path = tmp_path / "bad.jsonl"
    save_dataset_jsonl(d, path)
    text = path.read_text().replace("0.5", "0.0")
    path.write_text(text)
    with pytest.raises(DataError, match="propensity"):
        ingest_jsonl(path)


def test_ingest_parse_error_names_line(tmp_path):
    path = tmp_path / "broken.jsonl"
    path.write_text('{"id": 0, "states": [[0.0],[1.0]], "actions": [0], "rewards": [0.1], "propensities": [0.5]}\nnot-json\n')
    with pytest.raises(DataError, match="line 2"):
        ingest_jsonl(path)
