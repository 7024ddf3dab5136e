"""Shared test oracles."""

import numpy as np

from moesim.core import Metric, Policy
from moesim.envs.base import Environment
from moesim.errors import BoundParams, return_error_bound


class DeterministicMDP:
    """Tiny 3-state deterministic chain.

    State is a single coordinate in {0, 1, 2}; action 0 advances (capped),
    action 1 stays.  Rewards depend on (state, action).
    """

    def __init__(self):
        self.rewards = {(0, 0): 1.0, (0, 1): 0.0, (1, 0): 2.0, (1, 1): 0.5,
                        (2, 0): 0.0, (2, 1): 3.0}

    def env(self, horizon=4):
        def step(x, a):
            s = int(x[0])
            nxt = min(s + 1, 2) if a == 0 else s
            return np.array([float(nxt)]), self.rewards[(s, a)]

        return Environment(
            dim=1, n_actions=2, horizon=horizon, step=step,
            sample_initial=lambda rng: np.array([0.0]),
        )


def eps_greedy_of(base: Policy, eps: float) -> Policy:
    n = base.n_actions
    return Policy(n, lambda x: (1 - eps) * base.probs(x) + eps / n)


def simulate_bound_instance(rng, horizon=5):
    """One random deterministic task plus an imperfect model; returns the
    actual return gap and the bound fed with the exact per-step errors.

    Dynamics are linear (so the true Lipschitz constant is the operator
    norm) with a bounded state-dependent model perturbation; the reward is
    linear with its own bounded model perturbation.
    """
    dim = int(rng.integers(1, 4))
    A = rng.uniform(-1, 1, size=(dim, dim))
    b = rng.uniform(-1, 1, size=dim)
    c = rng.uniform(-1, 1, size=dim)
    l_t = float(np.linalg.svd(A, compute_uv=False)[0])
    l_r = float(np.linalg.norm(c))
    gamma = float(rng.uniform(0.5, 1.0))
    d0 = rng.uniform(-0.3, 0.3, size=dim)
    w = rng.uniform(0.5, 2.0, size=dim)
    r_amp = float(rng.uniform(0.0, 0.4))
    r_freq = float(rng.uniform(0.5, 2.0))

    def f(x):
        return A @ x + b

    def f_hat(x):
        return A @ x + b + d0 * np.sin(w * x)

    def reward(x):
        return float(c @ x)

    def reward_hat(x):
        return float(c @ x) + r_amp * np.cos(r_freq * float(x[0]))

    x = rng.uniform(-1, 1, size=dim)
    x_true, x_sim = x.copy(), x.copy()
    g_true = 0.0
    g_sim = 0.0
    eps_t = []
    eps_r = []
    m = Metric.euclidean(dim)
    for t in range(horizon + 1):
        g_true += gamma**t * reward(x_true)
        g_sim += gamma**t * reward_hat(x_sim)
        eps_r.append(abs(reward(x_sim) - reward_hat(x_sim)))
        nxt_true = f(x_true)
        nxt_sim = f_hat(x_sim)
        eps_t.append(m.distance(nxt_sim, f(x_sim)))
        x_true, x_sim = nxt_true, nxt_sim
    bound = return_error_bound(eps_t, eps_r, BoundParams(l_t, l_r, gamma))
    return abs(g_true - g_sim), bound
