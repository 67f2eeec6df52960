"""Shared fixtures: tiny exactly-solvable MDPs, exhaustively logged
datasets, and the influence-function machinery used by the
double-robustness checks."""

from __future__ import annotations

import numpy as np
import pytest

from sealrl.core import Dataset, FoldAssignment, TablePolicy, Trajectory, one_hot
from sealrl.envs import chain2_mdp, ss1_mdp
from sealrl.pseudo import NuisanceSet, bellman_residuals


# pass/fail lines recorded by the acceptance tests; emitted after the
# run so pytest's capture cannot swallow them
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def chain2():
    return chain2_mdp()


@pytest.fixture(scope="session")
def ss1():
    return ss1_mdp()


@pytest.fixture(scope="session")
def pi_always_one():
    return TablePolicy(np.array([[0.0, 1.0], [0.0, 1.0]]))


@pytest.fixture(scope="session")
def pi_always_zero():
    return TablePolicy(np.array([[1.0, 0.0], [1.0, 0.0]]))


def chain2_exhaustive_dataset() -> Dataset:
    """One deterministic trajectory covering all four chain cells:
    s0 -a0-> s0 -a1-> s1 -a1-> s1 -a0-> s0."""
    idx = [0, 0, 1, 1, 0]
    actions = [0, 1, 1, 0]
    states = one_hot(idx, 2)
    rewards = [float(a) for a in actions]
    tr = Trajectory(0, states, actions, rewards, [0.5] * 4)
    return Dataset([tr], num_actions=2, state_dim=2)


@pytest.fixture()
def chain2_data():
    return chain2_exhaustive_dataset()


def influence_mean_se(
    d: Dataset,
    folds: FoldAssignment,
    nuisances: NuisanceSet,
    gamma: float,
    action: int,
):
    """Mean and trajectory-clustered standard error of the per-step
    influence value whose average tracks the mean pseudo Q-outcome.

    The augmentation term couples entries through a shared pool of
    Bellman residuals, so a naive SE over table entries understates the
    sampling noise.  The influence value for step j replaces the
    minibatch average by the pool-level weight: the mean ratio that the
    fold's anchors put on step j, times step j's residual.
    """
    psis = []
    tids = []
    for fold in range(folds.num_folds):
        nu = nuisances.for_fold(fold)
        fd = d.subset(folds.ids_in(fold))
        tb = fd.transitions
        n = len(tb)
        resid = bellman_residuals(nu.q_model, tb, gamma)
        q_a = nu.q_model.predict_all(tb.states)[:, action]
        ipw = np.where(tb.actions == action, resid / tb.propensities, 0.0)
        psi = q_a + ipw
        if gamma > 0:
            wbar = pool_mean_ratio(nu, tb, action)
            psi = psi + gamma / (1.0 - gamma) * wbar * resid
        psis.append(psi)
        tids.append(tb.traj_ids)
    psi = np.concatenate(psis)
    tid = np.concatenate(tids)
    per_traj = np.array([psi[tid == i].mean() for i in np.unique(tid)])
    se = float(per_traj.std(ddof=1) / np.sqrt(per_traj.size))
    return float(psi.mean()), se


def pool_mean_ratio(nuisance, tb, action: int, chunk: int = 256) -> np.ndarray:
    """For each pool step j, the mean ratio weight that the fold's anchors
    assign to j when targeting the given action."""
    n = len(tb)
    d = tb.states.shape[1]
    anchors_a = np.full(n, action)
    wbar = np.zeros(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        k = hi - lo
        om = nuisance.omega.omega_matrix(
            anchors_a,
            tb.states,
            np.broadcast_to(tb.states[lo:hi], (n, k, d)),
            np.broadcast_to(tb.actions[lo:hi], (n, k)),
            np.broadcast_to(tb.propensities[lo:hi], (n, k)),
        )
        wbar[lo:hi] = om.mean(axis=0)
    return wbar


def net_preactivations(net, x: np.ndarray) -> list[np.ndarray]:
    """Hidden-layer preactivations; finite-difference gradient checks are
    only valid away from the rectifier kinks."""
    h = np.atleast_2d(x)
    out = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < len(net.weights) - 1:
            out.append(h.copy())
            h = np.maximum(h, 0.0)
    return out
