"""Visitation density-ratio estimation.

The state-conditional weight ``w(s' | a, s)`` (discounted visitation of
s' from the start pair, over the stationary state law) solves an
estimating equation: for any test function f over (next state, start
action, start state) triples,

    gamma * E[w(S'|a,s) * pi(A'|S')/b(A'|S') * f(S'next, a, s)]
      - E[w(S'next|a,s) * f(S'next, a, s)]
      = -(1 - gamma) * E[f(S_next, a, s)],

with (S', A', S'next) an independent logged transition and S_next the
start pair's own next state.  Embedding the residual of this equation
in an RKHS turns the sup over test functions into a closed-form
quadratic: a four-term kernel expansion over pairs of sampled pairs.
The loss is that squared RKHS norm, so it is nonnegative and vanishes
at the true weight.

Training follows a minibatch scheme: sample a batch of (start, primed)
index pairs, normalize the current network per start pair by its mean
over a second batch (the true weight has unit stationary mean), and
descend the kernel loss with Adam, treating the normalizer as a
constant within each step.  The full ratio multiplies the learned
weight by the policy-to-behavior probability ratio at the primed pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .approximator import AdamConfig, AdamState, DenseNet, adam_step
from .core import Dataset, Policy, Step, one_hot
from .errors import EmptyDataError, NumericError
from .oracle import TabularMDP, policy_matrix, stationary_distribution

__all__ = [
    "KernelSpec",
    "median_heuristic_bandwidth",
    "RatioModel",
    "RatioTrainConfig",
    "embed_triple",
    "delta_residual",
    "mmd_loss",
    "train_ratio",
    "ratio_predict",
    "exact_expectation_mmd_loss",
]


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian radial kernel on concatenated (s', one-hot a, s) triples."""

    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def gram(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        sq = (
            np.sum(x**2, axis=1)[:, None]
            + np.sum(y**2, axis=1)[None, :]
            - 2.0 * x @ y.T
        )
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.bandwidth**2))


def median_heuristic_bandwidth(points: np.ndarray) -> float:
    """Median nonzero pairwise distance of a pilot batch; 1.0 fallback."""
    points = np.atleast_2d(points)
    n = points.shape[0]
    if n < 2:
        return 1.0
    sq = (
        np.sum(points**2, axis=1)[:, None]
        + np.sum(points**2, axis=1)[None, :]
        - 2.0 * points @ points.T
    )
    dist = np.sqrt(np.maximum(sq[np.triu_indices(n, k=1)], 0.0))
    dist = dist[dist > 0]
    if dist.size == 0:
        return 1.0
    return float(np.median(dist))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def embed_triple(
    s_prime: np.ndarray, actions: np.ndarray, s: np.ndarray, num_actions: int
) -> np.ndarray:
    """Stack (s', one-hot action, s) rows for the weight net and kernel."""
    s_prime = np.atleast_2d(s_prime)
    s = np.atleast_2d(s)
    return np.concatenate([s_prime, one_hot(actions, num_actions), s], axis=1)


class RatioModel:
    """Positive weight function w(s' | a, s): a dense net with a softplus
    output head, optionally normalized per start pair by its mean over a
    stored reference batch of stationary states."""

    def __init__(
        self,
        net: DenseNet,
        num_actions: int,
        state_dim: int,
        reference_states: np.ndarray | None = None,
    ):
        if net.in_dim != 2 * state_dim + num_actions:
            raise ValueError("net input width must be 2 * state_dim + num_actions")
        self.net = net
        self.num_actions = num_actions
        self.state_dim = state_dim
        self.reference_states = (
            None if reference_states is None else np.atleast_2d(reference_states)
        )

    @staticmethod
    def fresh(
        state_dim: int, num_actions: int, hidden: tuple[int, ...], seed: int
    ) -> "RatioModel":
        net = DenseNet((2 * state_dim + num_actions, *hidden, 1), seed=seed)
        return RatioModel(net, num_actions, state_dim)

    def raw(self, s_prime: np.ndarray, actions: np.ndarray, s: np.ndarray) -> np.ndarray:
        x = embed_triple(s_prime, actions, s, self.num_actions)
        return _softplus(self.net.forward(x)[:, 0])

    def normalizer(self, actions: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Per start pair, the mean raw weight over the reference states."""
        s = np.atleast_2d(s)
        actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
        if self.reference_states is None:
            return np.ones(s.shape[0])
        m = self.reference_states.shape[0]
        n = s.shape[0]
        rep_ref = np.tile(self.reference_states, (n, 1))
        rep_a = np.repeat(actions, m)
        rep_s = np.repeat(s, m, axis=0)
        z = self.raw(rep_ref, rep_a, rep_s).reshape(n, m).mean(axis=1)
        return np.maximum(z, 1e-12)

    def predict(self, s_prime: np.ndarray, actions: np.ndarray, s: np.ndarray) -> np.ndarray:
        return self.raw(s_prime, actions, s) / self.normalizer(actions, s)

    def to_dict(self) -> dict:
        from .approximator import model_to_dict

        kernel = getattr(self, "kernel", None)
        return {
            "kind": "ratio",
            "net": model_to_dict(self.net),
            "num_actions": self.num_actions,
            "state_dim": self.state_dim,
            "reference_states": (
                None if self.reference_states is None else self.reference_states.tolist()
            ),
            "kernel": None if kernel is None else {"bandwidth": kernel.bandwidth},
        }

    @staticmethod
    def from_dict(obj: dict) -> "RatioModel":
        from .approximator import model_from_dict

        ref = obj.get("reference_states")
        model = RatioModel(
            model_from_dict(obj["net"]),
            num_actions=int(obj["num_actions"]),
            state_dim=int(obj["state_dim"]),
            reference_states=None if ref is None else np.asarray(ref, dtype=np.float64),
        )
        if obj.get("kernel") is not None:
            model.kernel = KernelSpec(float(obj["kernel"]["bandwidth"]))
        return model


@dataclass
class RatioTrainConfig:
    steps: int = 800
    batch_pairs: int = 64
    norm_batch: int = 64
    reference_size: int = 256
    hidden: tuple[int, ...] = (32, 32)
    optimizer: AdamConfig = field(default_factory=lambda: AdamConfig(lr=2e-3))


def delta_residual(
    w: RatioModel, anchor: Step, primed: Step, pi: Policy, gamma: float
) -> float:
    """Sampled estimating-equation residual for one (start, primed) pair:
    gamma * w(primed state | start) * pi/b at the primed action, minus
    w(primed next state | start)."""
    rho = float(pi.prob_of(primed.state[None, :], np.array([primed.action]))[0])
    rho /= primed.propensity
    a = np.array([anchor.action])
    s = anchor.state[None, :]
    u = float(w.predict(primed.state[None, :], a, s)[0])
    v = float(w.predict(primed.next_state[None, :], a, s)[0])
    return gamma * u * rho - v


def _quadratic_loss(delta, kxx, kxy, kyy, gamma) -> float:
    n = delta.shape[0]
    one = np.ones(n)
    val = (
        delta @ kxx @ delta
        + 2.0 * (1.0 - gamma) * delta @ kxy @ one
        + (1.0 - gamma) ** 2 * one @ kyy @ one
    )
    return float(val) / (n * n)


def mmd_loss(
    w: RatioModel,
    pairs: list[tuple[Step, Step]],
    kernel: KernelSpec,
    pi: Policy,
    gamma: float,
) -> float:
    """Average of the four-term kernel expansion over all pairs of pairs.

    Equals the squared RKHS norm of the embedded estimating-equation
    residual, so it is nonnegative up to float error and small at the
    true weight.
    """
    if len(pairs) < 2:
        raise EmptyDataError("need at least two pairs")
    anchor_s = np.stack([p[0].state for p in pairs])
    anchor_a = np.array([p[0].action for p in pairs])
    anchor_next = np.stack([p[0].next_state for p in pairs])
    primed_s = np.stack([p[1].state for p in pairs])
    primed_a = np.array([p[1].action for p in pairs])
    primed_next = np.stack([p[1].next_state for p in pairs])
    primed_prop = np.array([p[1].propensity for p in pairs])

    rho = pi.prob_of(primed_s, primed_a) / primed_prop
    u = w.predict(primed_s, anchor_a, anchor_s)
    v = w.predict(primed_next, anchor_a, anchor_s)
    delta = gamma * rho * u - v
    px = embed_triple(primed_next, anchor_a, anchor_s, w.num_actions)
    py = embed_triple(anchor_next, anchor_a, anchor_s, w.num_actions)
    return _quadratic_loss(
        delta, kernel.gram(px, px), kernel.gram(px, py), kernel.gram(py, py), gamma
    )


def train_ratio(
    d_fold: Dataset,
    pi: Policy,
    kernel: KernelSpec | None,
    cfg: RatioTrainConfig,
    seed: int = 0,
    gamma: float = 0.5,
) -> RatioModel:
    """Minibatch training of the weight net on the kernel loss.

    Each step samples a batch of (start, primed) index pairs plus a
    second batch whose mean raw weight normalizes the net per start
    pair (held constant within the step).  The returned model carries a
    reference batch drawn from the fold so later predictions stay
    normalized.  A missing kernel gets its bandwidth from the median
    heuristic over a pilot batch of embedded triples.
    """
    tb = d_fold.transitions
    n = len(tb)
    if n < 2:
        raise EmptyDataError("fold too small to form pairs")
    rng = np.random.default_rng(seed)
    model = RatioModel.fresh(d_fold.state_dim, d_fold.num_actions, cfg.hidden, seed)
    net = model.net

    if kernel is None:
        pilot = rng.integers(0, n, size=min(256, n))
        pts = embed_triple(
            tb.next_states[pilot], tb.actions[pilot], tb.states[pilot], d_fold.num_actions
        )
        # exp(-||x - y||^2 / med^2): the usual RBF median-heuristic scale
        kernel = KernelSpec(median_heuristic_bandwidth(pts) / np.sqrt(2.0))

    params = net.params()
    state = AdamState.for_params(params, cfg.optimizer)
    batch = min(cfg.batch_pairs, max(2, n - 1))
    for step_i in range(cfg.steps):
        ia = rng.integers(0, n, size=batch)
        ib = rng.integers(0, n, size=batch)
        clash = ia == ib
        while np.any(clash):
            ib[clash] = rng.integers(0, n, size=int(clash.sum()))
            clash = ia == ib
        im = rng.integers(0, n, size=min(cfg.norm_batch, n))

        a_s = tb.states[ia]
        a_a = tb.actions[ia]
        a_nx = tb.next_states[ia]
        p_s = tb.states[ib]
        p_nx = tb.next_states[ib]
        rho = pi.prob_of(p_s, tb.actions[ib]) / tb.propensities[ib]

        # per-start-pair normalizer over the second batch (stop-gradient)
        m = im.shape[0]
        zx = embed_triple(
            np.tile(tb.states[im], (batch, 1)),
            np.repeat(a_a, m),
            np.repeat(a_s, m, axis=0),
            model.num_actions,
        )
        z = _softplus(net.forward(zx)[:, 0]).reshape(batch, m).mean(axis=1)
        z = np.maximum(z, 1e-8)

        xu = embed_triple(p_s, a_a, a_s, model.num_actions)
        xv = embed_triple(p_nx, a_a, a_s, model.num_actions)
        out, acts = net.forward_cache(np.vstack([xu, xv]))
        raw = _softplus(out[:, 0])
        sig = _sigmoid(out[:, 0])
        u = raw[:batch] / z
        v = raw[batch:] / z
        delta = gamma * rho * u - v

        kxx = kernel.gram(xv, xv)
        kxy = kernel.gram(xv, embed_triple(a_nx, a_a, a_s, model.num_actions))
        loss_grad_delta = (2.0 / batch**2) * (kxx @ delta + (1.0 - gamma) * kxy.sum(axis=1))
        if not np.all(np.isfinite(loss_grad_delta)):
            raise NumericError(f"ratio loss gradient non-finite at step {step_i}")

        up_u = loss_grad_delta * gamma * rho / z * sig[:batch]
        up_v = -loss_grad_delta / z * sig[batch:]
        upstream = np.concatenate([up_u, up_v])[:, None]
        grads = net.backward(acts, upstream)
        params, state = adam_step(params, grads, state)
        net.set_params(params)

    ref = rng.choice(n, size=min(cfg.reference_size, n), replace=False)
    model.reference_states = tb.states[ref]
    model.kernel = kernel
    return model


def ratio_predict(
    w: RatioModel,
    a_prime: int,
    s_prime: np.ndarray,
    a: int,
    s: np.ndarray,
    pi: Policy,
    propensity: float,
) -> float:
    """Full density ratio at one point: pi(a'|s') / b(a'|s') * w(s'|a,s)."""
    if propensity <= 0:
        raise ValueError("propensity must be positive")
    p = float(pi.prob_of(np.atleast_2d(s_prime), np.array([a_prime]))[0])
    wval = float(w.predict(np.atleast_2d(s_prime), np.array([a]), np.atleast_2d(s))[0])
    return p / propensity * wval


def exact_expectation_mmd_loss(
    mdp: TabularMDP,
    w_table: np.ndarray,
    pi: Policy,
    gamma: float,
    kernel: KernelSpec,
) -> float:
    """Population kernel loss on a tabular MDP by full enumeration.

    ``w_table[s, a, s']`` is the candidate weight; states are one-hot
    embedded for the kernel.  The embedded residual is an exact linear
    combination of kernel features at (next state, start action, start
    state) triples, and the loss is its squared RKHS norm, so it is
    exactly zero at the true weight and positive elsewhere.
    """
    ns, na = mdp.num_states, mdp.num_actions
    p_inf = stationary_distribution(mdp)
    rho = policy_matrix(pi, ns) / mdp.behavior  # (s', a')
    w = np.asarray(w_table, dtype=np.float64)
    if w.shape != (ns, na, ns):
        raise ValueError(f"w_table must have shape {(ns, na, ns)}")

    # landing kernels of primed transitions
    g_land = np.einsum("ua,uak->uk", p_inf * rho, mdp.transition)  # weighted by pi/b
    mu_land = np.einsum("ua,uak->k", p_inf, mdp.transition)

    # coefficient of the embedding point (k | a, s) in the residual
    term1 = gamma * np.einsum("sau,uk->sak", w, g_land)
    term2 = -w * mu_land[None, None, :]
    term3 = (1.0 - gamma) * mdp.transition
    coef = (p_inf[:, :, None] * (term1 + term2 + term3)).reshape(-1)

    # embedding points in matching (s, a, k) order
    eye = np.eye(ns)
    pts = []
    for s in range(ns):
        for a in range(na):
            for k in range(ns):
                pts.append(
                    np.concatenate([eye[k], one_hot(a, na)[0], eye[s]])
                )
    pts = np.stack(pts)
    gram = kernel.gram(pts, pts)
    return float(coef @ gram @ coef)
