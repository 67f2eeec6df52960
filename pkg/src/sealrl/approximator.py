"""Function-approximation backends used throughout the pipeline.

Three families back every learned quantity (Q-functions, density
ratios, contrast regressions, fitted-Q evaluation):

* a tabular table over one-hot encoded states,
* a linear map on raw state features, and
* a small fully connected network with rectifier hidden layers, an
  identity output layer, hand-written backpropagation, and Adam.

Training is single threaded and bit-reproducible given a seed; trained
models are immutable in practice and safe to share for prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataError, NumericError, ShapeError

__all__ = [
    "DenseNet",
    "AdamConfig",
    "AdamState",
    "adam_step",
    "net_forward",
    "net_backward",
    "QModel",
    "TabularQ",
    "LinearQ",
    "NetQ",
    "RegressionConfig",
    "fit_regression",
    "TabularRegressor",
    "LinearRegressor",
    "NetRegressor",
    "save_model",
    "load_model",
    "model_to_dict",
    "model_from_dict",
]


def _as_batch(x: np.ndarray, dim: int, what: str = "input") -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != dim:
        raise ShapeError(f"{what} has width {x.shape[1]}, expected {dim}")
    return x


class DenseNet:
    """Fully connected net: rectifier hidden layers, identity output.

    Parameters live in ``weights`` / ``biases`` lists; initialization is
    uniform scaled by fan-in and fully determined by the seed.
    """

    def __init__(self, widths: tuple[int, ...], seed: int = 0):
        if len(widths) < 2:
            raise ShapeError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = params[2 * i]
            self.biases[i] = params[2 * i + 1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cache(_as_batch(x, self.in_dim))
        return out

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping per-layer activations for backprop."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients of sum_i <grad_out_i, output_i> by the
        chain rule; returned in the same order as ``params()``."""
        grads: list[np.ndarray | None] = [None] * (2 * len(self.weights))
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            inp = acts[i]
            if i < len(self.weights) - 1:
                # acts[i + 1] stores the rectified output of layer i
                g = g * (acts[i + 1] > 0.0)
            grads[2 * i] = inp.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
        return grads  # type: ignore[return-value]


def net_forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the net; accepts a single state vector or a batch."""
    single = np.asarray(x).ndim == 1
    out = net.forward(x)
    return out[0] if single else out


def net_backward(net: DenseNet, x: np.ndarray, upstream_grad: np.ndarray) -> list[np.ndarray]:
    """Gradients of sum_i <upstream_i, net(x_i)> for every parameter."""
    x = _as_batch(x, net.in_dim)
    g = np.atleast_2d(np.asarray(upstream_grad, dtype=np.float64))
    if g.shape != (x.shape[0], net.out_dim):
        raise ShapeError(f"upstream gradient shape {g.shape} != {(x.shape[0], net.out_dim)}")
    _, acts = net.forward_cache(x)
    return net.backward(acts, g)


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    cfg: AdamConfig = field(default_factory=AdamConfig)

    @staticmethod
    def for_params(params: list[np.ndarray], cfg: AdamConfig | None = None) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
            cfg=cfg or AdamConfig(),
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; mutates the state accumulators and
    returns fresh parameter arrays."""
    cfg = state.cfg
    state.t += 1
    b1t = 1.0 - cfg.beta1**state.t
    b2t = 1.0 - cfg.beta2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[i] / b1t
        v_hat = state.v[i] / b2t
        out.append(p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps))
    return out, state


class QModel:
    """State-action value model: ``predict_all`` returns one finite value
    per action for each state row."""

    num_actions: int
    state_dim: int

    def predict_all(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        q = self.predict_all(states)
        return q[np.arange(q.shape[0]), np.asarray(actions, dtype=np.intp)]


class TabularQ(QModel):
    """Q-table over one-hot states (decoded by argmax)."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)
        self.state_dim = self.table.shape[0]
        self.num_actions = self.table.shape[1]

    def predict_all(self, states: np.ndarray) -> np.ndarray:
        idx = np.argmax(_as_batch(states, self.state_dim, "state"), axis=1)
        return self.table[idx]


class LinearQ(QModel):
    """Per-action affine map on raw state features."""

    def __init__(self, weights: np.ndarray, intercepts: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)  # (d, nA)
        self.intercepts = np.asarray(intercepts, dtype=np.float64)  # (nA,)
        self.state_dim = self.weights.shape[0]
        self.num_actions = self.weights.shape[1]

    @staticmethod
    def zeros(state_dim: int, num_actions: int) -> "LinearQ":
        return LinearQ(np.zeros((state_dim, num_actions)), np.zeros(num_actions))

    def predict_all(self, states: np.ndarray) -> np.ndarray:
        return _as_batch(states, self.state_dim, "state") @ self.weights + self.intercepts


class NetQ(QModel):
    """Shared-trunk dense net with one output head per action."""

    def __init__(self, net: DenseNet):
        self.net = net
        self.state_dim = net.in_dim
        self.num_actions = net.out_dim

    @staticmethod
    def fresh(state_dim: int, num_actions: int, hidden: tuple[int, ...], seed: int) -> "NetQ":
        return NetQ(DenseNet((state_dim, *hidden, num_actions), seed=seed))

    def predict_all(self, states: np.ndarray) -> np.ndarray:
        return self.net.forward(states)


def tabular_q_regress(
    prev: np.ndarray, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Per-cell target means on one-hot states; uncovered cells keep the
    previous value."""
    table = prev.copy()
    idx = np.argmax(states, axis=1)
    for a in range(prev.shape[1]):
        sel = actions == a
        if not np.any(sel):
            continue
        sums = np.bincount(idx[sel], weights=targets[sel], minlength=prev.shape[0])
        counts = np.bincount(idx[sel], minlength=prev.shape[0])
        covered = counts > 0
        table[covered, a] = sums[covered] / counts[covered]
    return table


def linear_q_regress(
    prev: LinearQ, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> LinearQ:
    """Per-action least squares; actions without samples keep the previous
    coefficients."""
    w = prev.weights.copy()
    c = prev.intercepts.copy()
    for a in range(prev.num_actions):
        sel = actions == a
        if not np.any(sel):
            continue
        design = np.column_stack([states[sel], np.ones(sel.sum())])
        coef, *_ = np.linalg.lstsq(design, targets[sel], rcond=None)
        w[:, a] = coef[:-1]
        c[a] = coef[-1]
    return LinearQ(w, c)


@dataclass
class RegressionConfig:
    """Backend and training budget for scalar regression."""

    backend: str = "net"  # tabular | linear | net
    hidden: tuple[int, ...] = (64, 64)
    epochs: int = 200
    batch_size: int = 64
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    linear_solver: str = "exact"  # exact (least squares) | gd (full batch)
    gd_steps: int = 500
    fill_value: float = 0.0  # tabular cells with no samples


class TabularRegressor:
    """Per-cell means over one-hot inputs; uncovered cells hold
    ``fill_value`` and are flagged in ``covered``."""

    def __init__(self, values: np.ndarray, covered: np.ndarray):
        self.values = np.asarray(values, dtype=np.float64)
        self.covered = np.asarray(covered, dtype=bool)
        self.state_dim = self.values.shape[0]

    def predict(self, states: np.ndarray) -> np.ndarray:
        idx = np.argmax(_as_batch(states, self.state_dim, "state"), axis=1)
        return self.values[idx]


class LinearRegressor:
    def __init__(self, w: np.ndarray, c: float, loss_history: list[float] | None = None):
        self.w = np.asarray(w, dtype=np.float64)
        self.c = float(c)
        self.state_dim = self.w.shape[0]
        self.loss_history = loss_history or []

    def predict(self, states: np.ndarray) -> np.ndarray:
        return _as_batch(states, self.state_dim, "state") @ self.w + self.c


class NetRegressor:
    def __init__(self, net: DenseNet, loss_history: list[float] | None = None):
        self.net = net
        self.state_dim = net.in_dim
        self.loss_history = loss_history or []

    def predict(self, states: np.ndarray) -> np.ndarray:
        return self.net.forward(states)[:, 0]


def _fit_tabular(x: np.ndarray, y: np.ndarray, cfg: RegressionConfig) -> TabularRegressor:
    dim = x.shape[1]
    idx = np.argmax(x, axis=1)
    values = np.full(dim, cfg.fill_value)
    covered = np.zeros(dim, dtype=bool)
    for cell in np.unique(idx):
        values[cell] = y[idx == cell].mean()
        covered[cell] = True
    return TabularRegressor(values, covered)


def _fit_linear_exact(x: np.ndarray, y: np.ndarray) -> LinearRegressor:
    design = np.column_stack([x, np.ones(x.shape[0])])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return LinearRegressor(coef[:-1], coef[-1])


def _fit_linear_gd(x: np.ndarray, y: np.ndarray, cfg: RegressionConfig) -> LinearRegressor:
    # Full-batch gradient descent with a step of 1/L (L = Lipschitz
    # constant of the gradient), which guarantees monotone loss decay.
    design = np.column_stack([x, np.ones(x.shape[0])])
    n = design.shape[0]
    gram = design.T @ design / n
    lips = 2.0 * float(np.linalg.eigvalsh(gram)[-1])
    step = 1.0 / max(lips, 1e-12)
    theta = np.zeros(design.shape[1])
    history = []
    for _ in range(cfg.gd_steps):
        resid = design @ theta - y
        history.append(float(resid @ resid / n))
        theta = theta - step * (2.0 / n) * (design.T @ resid)
    return LinearRegressor(theta[:-1], theta[-1], loss_history=history)


def _fit_net(x: np.ndarray, y: np.ndarray, cfg: RegressionConfig, seed: int) -> NetRegressor:
    rng = np.random.default_rng(seed)
    net = DenseNet((x.shape[1], *cfg.hidden, 1), seed=seed)
    # start the output head at the target mean so the optimizer only has
    # to learn the shape, not the offset
    net.biases[-1][:] = float(y.mean())
    params = net.params()
    state = AdamState.for_params(params, cfg.optimizer)
    n = x.shape[0]
    batch = min(cfg.batch_size, n)
    history = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, batch):
            sel = perm[lo : lo + batch]
            out, acts = net.forward_cache(x[sel])
            resid = out[:, 0] - y[sel]
            grads = net.backward(acts, (2.0 / sel.shape[0]) * resid[:, None])
            params, state = adam_step(params, grads, state)
            net.set_params(params)
        mse = float(np.mean((net.forward(x)[:, 0] - y) ** 2))
        if not np.isfinite(mse):
            raise NumericError("regression loss became non-finite")
        history.append(mse)
    return NetRegressor(net, loss_history=history)


def fit_regression(inputs, targets, cfg: RegressionConfig, seed: int = 0):
    """Fit a scalar model of state -> real minimizing mean squared error.

    Dispatches on ``cfg.backend``; training is deterministic given the
    seed.  Raises EmptyDataError on no samples.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyDataError("regression received no samples")
    if x.shape[0] != y.shape[0]:
        raise ShapeError("inputs and targets differ in length")
    if cfg.backend == "tabular":
        return _fit_tabular(x, y, cfg)
    if cfg.backend == "linear":
        if cfg.linear_solver == "gd":
            return _fit_linear_gd(x, y, cfg)
        return _fit_linear_exact(x, y)
    if cfg.backend == "net":
        return _fit_net(x, y, cfg, seed)
    raise ValueError(f"unknown backend {cfg.backend!r}")


# Checkpoint format: shapes plus flat parameter arrays plus a config echo,
# serialized as JSON.

def _flat(arrays: list[np.ndarray]) -> dict:
    return {
        "shapes": [list(a.shape) for a in arrays],
        "params": np.concatenate([a.reshape(-1) for a in arrays]).tolist(),
    }


def _unflat(obj: dict) -> list[np.ndarray]:
    flat = np.asarray(obj["params"], dtype=np.float64)
    arrays = []
    at = 0
    for shape in obj["shapes"]:
        size = int(np.prod(shape)) if shape else 1
        arrays.append(flat[at : at + size].reshape(shape))
        at += size
    return arrays


def model_to_dict(model) -> dict:
    if isinstance(model, TabularQ):
        return {"kind": "tabular_q", **_flat([model.table])}
    if isinstance(model, LinearQ):
        return {"kind": "linear_q", **_flat([model.weights, model.intercepts])}
    if isinstance(model, NetQ):
        return {"kind": "net_q", "widths": list(model.net.widths), **_flat(model.net.params())}
    if isinstance(model, TabularRegressor):
        return {
            "kind": "tabular_reg",
            **_flat([model.values, model.covered.astype(np.float64)]),
        }
    if isinstance(model, LinearRegressor):
        return {"kind": "linear_reg", **_flat([model.w, np.array([model.c])])}
    if isinstance(model, NetRegressor):
        return {
            "kind": "net_reg",
            "widths": list(model.net.widths),
            **_flat(model.net.params()),
        }
    if isinstance(model, DenseNet):
        return {"kind": "dense_net", "widths": list(model.widths), **_flat(model.params())}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(obj: dict):
    kind = obj["kind"]
    arrays = _unflat(obj)
    if kind == "tabular_q":
        return TabularQ(arrays[0])
    if kind == "linear_q":
        return LinearQ(arrays[0], arrays[1])
    if kind in ("net_q", "net_reg", "dense_net"):
        net = DenseNet(tuple(obj["widths"]), seed=0)
        net.set_params(arrays)
        if kind == "net_q":
            return NetQ(net)
        if kind == "net_reg":
            return NetRegressor(net)
        return net
    if kind == "tabular_reg":
        return TabularRegressor(arrays[0], arrays[1] > 0.5)
    if kind == "linear_reg":
        return LinearRegressor(arrays[0], arrays[1][0])
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def save_model(model, path, config: dict | None = None) -> None:
    obj = model_to_dict(model)
    if config is not None:
        obj["config"] = config
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
