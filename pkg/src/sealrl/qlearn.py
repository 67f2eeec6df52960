"""Offline initial Q-estimation.

Four trainers produce the first-stage Q-model from logged data:

* ``fqi``: fitted Q-iteration, regressing bootstrapped targets round by
  round (exact per-cell regression for the tabular backend, least
  squares per action for the linear one, warm-started minibatch Adam
  for the net);
* ``dqn_offline``: minibatch gradient descent on the squared Bellman
  target error with a periodically synced target network;
* ``double_dqn_offline``: same loop, but the online network selects the
  next action while the target network evaluates it;
* ``quantile_fqi``: a distributional variant that learns quantiles of
  the return at midpoint fractions and averages them into a Q-value.

All trainers are bit-reproducible given (dataset, config, seed).
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
from .core import Dataset
from .errors import EmptyDataError, NumericError

__all__ = [
    "QTrainConfig",
    "fqi",
    "dqn_offline",
    "double_dqn_offline",
    "quantile_fqi",
    "train_q",
    "QuantileTabularQ",
    "QuantileNetQ",
    "quantile_fractions",
    "pinball_loss",
]


@dataclass
class QTrainConfig:
    """Training budget and backend for the initial Q-estimators."""

    variant: str = "fqi"  # fqi | dqn | double_dqn | quantile
    backend: str = "tabular"  # tabular | linear | net
    iterations: int = 60  # regression rounds (fqi / tabular quantile)
    steps: int = 2000  # gradient steps (dqn family / net quantile)
    minibatch_size: int = 32
    target_sync: int = 200  # target-network refresh period, in steps
    gamma: float = 0.5
    num_quantiles: int = 11
    hidden: tuple[int, ...] = (64, 64)
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    net_epochs_per_round: int = 40  # inner budget of a net fqi round
    track_history: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if self.num_quantiles < 1:
            raise ValueError("num_quantiles must be >= 1")


def _zero_model(d: Dataset, cfg: QTrainConfig) -> QModel:
    if cfg.backend == "tabular":
        return TabularQ(np.zeros((d.state_dim, d.num_actions)))
    if cfg.backend == "linear":
        return LinearQ.zeros(d.state_dim, d.num_actions)
    if cfg.backend == "net":
        return NetQ.fresh(d.state_dim, d.num_actions, cfg.hidden, cfg.seed)
    raise ValueError(f"unknown backend {cfg.backend!r}")


def _require_data(d: Dataset) -> None:
    if len(d.transitions) == 0:
        raise EmptyDataError("no logged transitions")


def _net_regress_q(
    net: DenseNet,
    states: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    cfg: QTrainConfig,
    rng: np.random.Generator,
) -> None:
    """Warm-started minibatch regression of Q(action, state) onto targets,
    touching only the taken action's output head per sample."""
    params = net.params()
    state = AdamState.for_params(params, cfg.optimizer)
    n = states.shape[0]
    batch = min(cfg.minibatch_size, n)
    rows = np.arange(batch)
    for _ in range(cfg.net_epochs_per_round):
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


def fqi(d: Dataset, cfg: QTrainConfig, gamma: float | None = None) -> QModel:
    """Fitted Q-iteration: each round regresses the one-step bootstrapped
    target (reward plus discounted max of the previous round's values at
    the next state) on the logged state-action pairs."""
    _require_data(d)
    gamma = cfg.gamma if gamma is None else gamma
    tr = d.transitions
    model = _zero_model(d, cfg)
    history: list[np.ndarray] = []
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.iterations):
        targets = tr.rewards + gamma * model.predict_all(tr.next_states).max(axis=1)
        if cfg.backend == "tabular":
            model = TabularQ(tabular_q_regress(model.table, tr.states, tr.actions, targets))
            if cfg.track_history:
                history.append(model.table.copy())
        elif cfg.backend == "linear":
            model = linear_q_regress(model, tr.states, tr.actions, targets)
        else:
            _net_regress_q(model.net, tr.states, tr.actions, targets, cfg, rng)
    if cfg.track_history:
        model.history = history
    return model


def _dqn_loop(d: Dataset, cfg: QTrainConfig, double: bool) -> NetQ:
    _require_data(d)
    if cfg.backend != "net":
        raise ValueError("dqn variants require the net backend")
    tr = d.transitions
    rng = np.random.default_rng(cfg.seed)
    model = NetQ.fresh(d.state_dim, d.num_actions, cfg.hidden, cfg.seed)
    net = model.net
    params = net.params()
    target_params = [p.copy() for p in params]
    target_net = DenseNet(net.widths, seed=cfg.seed)
    state = AdamState.for_params(params, cfg.optimizer)
    n = len(tr)
    batch = min(cfg.minibatch_size, n)
    rows = np.arange(batch)
    log: list[dict] = []
    log_every = max(1, cfg.steps // 50)
    for step in range(cfg.steps):
        sel = rng.integers(0, n, size=batch)
        target_net.set_params(target_params)
        q_next_target = target_net.forward(tr.next_states[sel])
        if double:
            pick = np.argmax(net.forward(tr.next_states[sel]), axis=1)
        else:
            pick = np.argmax(q_next_target, axis=1)
        targets = tr.rewards[sel] + cfg.gamma * q_next_target[rows, pick]
        out, acts = net.forward_cache(tr.states[sel])
        resid = out[rows, tr.actions[sel]] - targets
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise NumericError(f"dqn loss became non-finite at step {step}")
        upstream = np.zeros_like(out)
        upstream[rows, tr.actions[sel]] = (2.0 / batch) * resid
        grads = net.backward(acts, upstream)
        params, state = adam_step(params, grads, state)
        net.set_params(params)
        if (step + 1) % cfg.target_sync == 0:
            target_params = [p.copy() for p in params]
        if step % log_every == 0 or step == cfg.steps - 1:
            log.append({"step": step, "loss": loss})
    model.target_params = target_params
    model.training_log = log
    return model


def dqn_offline(d: Dataset, cfg: QTrainConfig) -> NetQ:
    """Minibatch training on the squared Bellman target error, with the
    bootstrap target network synced every ``target_sync`` steps."""
    return _dqn_loop(d, cfg, double=False)


def double_dqn_offline(d: Dataset, cfg: QTrainConfig) -> NetQ:
    """Like ``dqn_offline`` but the online network picks the next action
    and the target network scores it, reducing maximization bias."""
    return _dqn_loop(d, cfg, double=True)


def quantile_fractions(num_quantiles: int) -> np.ndarray:
    """Midpoint fractions (2j - 1) / (2K) for j = 1..K."""
    j = np.arange(1, num_quantiles + 1)
    return (2 * j - 1) / (2.0 * num_quantiles)


def pinball_loss(predicted: float, samples: np.ndarray, fraction: float) -> float:
    """Mean quantile-regression loss of a scalar prediction."""
    u = np.asarray(samples, dtype=np.float64) - predicted
    return float(np.mean(u * (fraction - (u < 0.0))))


class QuantileTabularQ(QModel):
    """Per-cell return quantiles over one-hot states; the Q-value is the
    quantile average."""

    def __init__(self, quantiles: np.ndarray):
        self.quantiles = np.asarray(quantiles, dtype=np.float64)  # (nS, nA, K)
        self.state_dim = self.quantiles.shape[0]
        self.num_actions = self.quantiles.shape[1]

    @property
    def table(self) -> np.ndarray:
        return self.quantiles.mean(axis=2)

    def predict_all(self, states: np.ndarray) -> np.ndarray:
        idx = np.argmax(np.atleast_2d(states), axis=1)
        return self.table[idx]

    def predict_quantiles(self, states: np.ndarray) -> np.ndarray:
        idx = np.argmax(np.atleast_2d(states), axis=1)
        return self.quantiles[idx]


class QuantileNetQ(QModel):
    """Dense net with num_actions * num_quantiles outputs."""

    def __init__(self, net: DenseNet, num_actions: int, num_quantiles: int):
        self.net = net
        self.num_actions = num_actions
        self.num_quantiles = num_quantiles
        self.state_dim = net.in_dim

    def predict_quantiles(self, states: np.ndarray) -> np.ndarray:
        out = self.net.forward(states)
        return out.reshape(out.shape[0], self.num_actions, self.num_quantiles)

    def predict_all(self, states: np.ndarray) -> np.ndarray:
        return self.predict_quantiles(states).mean(axis=2)


def _quantile_fqi_tabular(d: Dataset, cfg: QTrainConfig, gamma: float) -> QuantileTabularQ:
    tr = d.transitions
    k = cfg.num_quantiles
    fracs = quantile_fractions(k)
    theta = np.zeros((d.state_dim, d.num_actions, k))
    idx = np.argmax(tr.states, axis=1)
    nxt = np.argmax(tr.next_states, axis=1)
    for _ in range(cfg.iterations):
        greedy = np.argmax(theta.mean(axis=2), axis=1)
        # each sample contributes K target atoms from the greedy next cell
        atoms = tr.rewards[:, None] + gamma * theta[nxt, greedy[nxt], :]
        new = theta.copy()
        for s in range(d.state_dim):
            for a in range(d.num_actions):
                sel = (idx == s) & (tr.actions == a)
                if not np.any(sel):
                    continue
                pool = atoms[sel].reshape(-1)
                new[s, a] = np.quantile(pool, fracs, method="inverted_cdf")
        theta = new
    return QuantileTabularQ(theta)


def _quantile_net(d: Dataset, cfg: QTrainConfig, gamma: float) -> QuantileNetQ:
    tr = d.transitions
    k = cfg.num_quantiles
    fracs = quantile_fractions(k)
    rng = np.random.default_rng(cfg.seed)
    net = DenseNet((d.state_dim, *cfg.hidden, d.num_actions * k), seed=cfg.seed)
    model = QuantileNetQ(net, d.num_actions, k)
    params = net.params()
    target_params = [p.copy() for p in params]
    target_net = DenseNet(net.widths, seed=cfg.seed)
    state = AdamState.for_params(params, cfg.optimizer)
    n = len(tr)
    batch = min(cfg.minibatch_size, n)
    rows = np.arange(batch)
    for step in range(cfg.steps):
        sel = rng.integers(0, n, size=batch)
        target_net.set_params(target_params)
        tq = target_net.forward(tr.next_states[sel]).reshape(batch, d.num_actions, k)
        greedy = np.argmax(tq.mean(axis=2), axis=1)
        atoms = tr.rewards[sel, None] + gamma * tq[rows, greedy]  # (batch, K)
        out, acts = net.forward_cache(tr.states[sel])
        pred = out.reshape(batch, d.num_actions, k)[rows, tr.actions[sel]]  # (batch, K)
        # d pinball / d prediction, averaged over target atoms and levels
        grad_pred = np.mean(
            (atoms[:, None, :] < pred[:, :, None]) - fracs[None, :, None], axis=2
        )
        if not np.all(np.isfinite(grad_pred)):
            raise NumericError(f"quantile loss gradient non-finite at step {step}")
        upstream = np.zeros_like(out).reshape(batch, d.num_actions, k)
        upstream[rows, tr.actions[sel]] = grad_pred / (batch * k)
        grads = net.backward(acts, upstream.reshape(batch, -1))
        params, state = adam_step(params, grads, state)
        net.set_params(params)
        if (step + 1) % cfg.target_sync == 0:
            target_params = [p.copy() for p in params]
    model.target_params = target_params
    return model


def quantile_fqi(d: Dataset, cfg: QTrainConfig) -> QModel:
    """Distributional Q-estimation with quantile regression at midpoint
    fractions; the Q-estimate averages the learned quantiles.

    Tabular backend: exact sample-quantile regression per round (the
    pinball minimizer).  Net backend: minibatch pinball gradients with a
    synced target network.
    """
    _require_data(d)
    if cfg.backend == "tabular":
        return _quantile_fqi_tabular(d, cfg, cfg.gamma)
    if cfg.backend == "net":
        return _quantile_net(d, cfg, cfg.gamma)
    raise ValueError("quantile variant supports tabular and net backends")


def train_q(d: Dataset, cfg: QTrainConfig) -> QModel:
    """Dispatch on ``cfg.variant``."""
    if cfg.variant == "fqi":
        return fqi(d, cfg)
    if cfg.variant == "dqn":
        return dqn_offline(d, cfg)
    if cfg.variant == "double_dqn":
        return double_dqn_offline(d, cfg)
    if cfg.variant == "quantile":
        return quantile_fqi(d, cfg)
    raise ValueError(f"unknown variant {cfg.variant!r}")
