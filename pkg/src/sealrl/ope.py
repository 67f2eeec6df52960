"""Policy value estimation: fitted-Q evaluation on logged data and Monte
Carlo rollouts on simulators.

Fitted-Q evaluation iterates regressions of the one-step target (reward
plus the discounted policy-averaged value of the previous round at the
next state) onto the logged state-action pairs; after the final round
the value function is the policy-averaged Q.  The Monte Carlo estimator
plays seeded episodes in a simulator and reports the sample mean and
standard error of the truncated discounted return.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approximator import (
    AdamConfig,
    AdamState,
    DenseNet,
    LinearQ,
    NetQ,
    QModel,
    TabularQ,
    adam_step,
    linear_q_regress,
    tabular_q_regress,
)
from .core import Dataset, Policy, check_gamma, parallel_map
from .errors import EmptyDataError

__all__ = ["FQEConfig", "FQEResult", "fqe", "MCEstimate", "value_of_policy_mc"]


@dataclass
class FQEConfig:
    backend: str = "tabular"  # tabular | linear | net
    hidden: tuple[int, ...] = (64, 64)
    minibatch_size: int = 64
    epochs_per_round: int = 40
    optimizer: AdamConfig = field(default_factory=AdamConfig)


@dataclass
class FQEResult:
    q_model: QModel
    policy: Policy

    def value(self, states: np.ndarray) -> np.ndarray:
        """Policy-averaged Q at the given states."""
        states = np.atleast_2d(states)
        probs = self.policy.action_probs(states)
        return np.sum(probs * self.q_model.predict_all(states), axis=1)


def fqe(
    d: Dataset,
    pi: Policy,
    rounds: int,
    gamma: float,
    cfg: FQEConfig | None = None,
    seed: int = 0,
) -> FQEResult:
    """Fitted-Q evaluation of a fixed policy from logged data."""
    gamma = check_gamma(gamma)
    if rounds < 1:
        raise ValueError("need at least one round")
    cfg = cfg or FQEConfig()
    tb = d.transitions
    if len(tb) == 0:
        raise EmptyDataError("no logged transitions")
    next_probs = pi.action_probs(tb.next_states)

    if cfg.backend == "tabular":
        model: QModel = TabularQ(np.zeros((d.state_dim, d.num_actions)))
    elif cfg.backend == "linear":
        model = LinearQ.zeros(d.state_dim, d.num_actions)
    elif cfg.backend == "net":
        model = NetQ.fresh(d.state_dim, d.num_actions, cfg.hidden, seed)
    else:
        raise ValueError(f"unknown backend {cfg.backend!r}")

    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        v_next = np.sum(next_probs * model.predict_all(tb.next_states), axis=1)
        targets = tb.rewards + gamma * v_next
        if cfg.backend == "tabular":
            model = TabularQ(tabular_q_regress(model.table, tb.states, tb.actions, targets))
        elif cfg.backend == "linear":
            model = linear_q_regress(model, tb.states, tb.actions, targets)
        else:
            _net_round(model.net, tb.states, tb.actions, targets, cfg, rng)
    return FQEResult(q_model=model, policy=pi)


def _net_round(net: DenseNet, states, actions, targets, cfg: FQEConfig, rng) -> None:
    params = net.params()
    state = AdamState.for_params(params, cfg.optimizer)
    n = states.shape[0]
    batch = min(cfg.minibatch_size, n)
    rows = np.arange(batch)
    for _ in range(cfg.epochs_per_round):
        perm = rng.permutation(n)
        for lo in range(0, n - batch + 1, batch):
            sel = perm[lo : lo + batch]
            out, acts = net.forward_cache(states[sel])
            upstream = np.zeros_like(out)
            resid = out[rows, actions[sel]] - targets[sel]
            upstream[rows, actions[sel]] = (2.0 / batch) * resid
            grads = net.backward(acts, upstream)
            params, state = adam_step(params, grads, state)
            net.set_params(params)


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    episodes: int
    horizon: int

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "se": self.se,
            "episodes": self.episodes,
            "horizon": self.horizon,
        }


def value_of_policy_mc(
    env,
    pi: Policy,
    episodes: int,
    horizon: int,
    gamma: float,
    seed: int = 0,
    threads: int = 1,
) -> MCEstimate:
    """Mean and standard error of the discounted return over seeded
    rollouts truncated at ``horizon`` steps.

    Episodes use independent child seed streams, so the estimate does
    not depend on the thread count.
    """
    gamma = check_gamma(gamma)
    if episodes < 1 or horizon < 1:
        raise ValueError("need at least one episode and one step")
    streams = np.random.SeedSequence(seed).spawn(episodes)

    def play(stream) -> float:
        rng = np.random.default_rng(stream)
        s = env.initial_state(rng)
        total = 0.0
        disc = 1.0
        for _ in range(horizon):
            a = int(pi.sample(s[None, :], rng)[0])
            s, r = env.step(s, a, rng)
            total += disc * r
            disc *= gamma
        return total

    returns = np.array(parallel_map(play, streams, threads))
    se = float(returns.std(ddof=1) / np.sqrt(episodes)) if episodes > 1 else 0.0
    return MCEstimate(float(returns.mean()), se, episodes, horizon)
