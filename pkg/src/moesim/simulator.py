"""Rollout simulator: estimate a policy's value by simulating trajectories
with the per-step selected expert and averaging discounted returns.

Each rollout starts from a state drawn uniformly from the recorded initial
states, samples actions from the evaluation policy, and steps with whichever
expert the selector picks (or a forced single expert, for the standalone
parametric/nonparametric estimators).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Metric, Policy, StateVec, Trajectory, Transition, trajectory_return
from .models import NONPARAMETRIC, PARAMETRIC, NoSupportError
from .selection import (
    ModelUnusableError,
    SelectionContext,
    SelectorConfig,
    greedy_select,
    mcts_select,
)


@dataclass(frozen=True)
class SimConfig:
    """Rollout count, horizon, discount, selection config, master seed."""

    n_rollouts: int
    horizon: int
    gamma: float
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_rollouts < 1 or self.horizon < 1:
            raise ValueError("n_rollouts and horizon must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")


@dataclass
class ValueEstimate:
    """Mean simulated return plus per-rollout diagnostics.

    n_unreached_goal counts rollouts that never hit the terminal condition
    (always 0 for environments without one); model_usage counts simulated
    steps per expert.
    """

    v_hat: float
    per_rollout_returns: list[float]
    n_unreached_goal: int
    model_usage: dict[str, int]
    trajectories: list[Trajectory] = field(default_factory=list)
    rollout_records: list[dict] = field(default_factory=list)

    @property
    def capped(self) -> bool:
        """True when every rollout failed to reach the goal; the reported
        value is then a finite stand-in for 'never terminates'."""
        return self.n_unreached_goal == len(self.per_rollout_returns)

    def display_value(self) -> str:
        if self.n_unreached_goal > 0 and self.capped:
            return f"-inf (capped at {self.v_hat!r})"
        return repr(self.v_hat)


def simulate_value(
    ctx: SelectionContext,
    cfg: SimConfig,
    initial_states: Sequence[StateVec] | None = None,
    forced_model: str | None = None,
    mcts_trace: list | None = None,
) -> ValueEstimate:
    """Simulate cfg.n_rollouts trajectories under the evaluation policy and
    return the mean discounted return.

    `initial_states` defaults to the dataset's recorded initial states
    (the empirical initial distribution).  `forced_model` bypasses
    selection entirely, reproducing the standalone single-expert
    estimators.  A rollout whose only usable expert cannot step is cut
    short and counted as not having reached the goal.
    """
    if forced_model not in (None, PARAMETRIC, NONPARAMETRIC):
        raise ValueError(f"invalid forced model {forced_model!r}")
    starts = list(
        initial_states if initial_states is not None else ctx.dataset.initial_states
    )
    if not starts:
        raise ValueError("no initial states to sample from")
    returns: list[float] = []
    usage = {PARAMETRIC: 0, NONPARAMETRIC: 0}
    unreached = 0
    trajectories: list[Trajectory] = []
    records: list[dict] = []
    for n in range(cfg.n_rollouts):
        rng = np.random.default_rng([cfg.seed, n])
        x = np.array(starts[int(rng.integers(len(starts)))], dtype=np.float64)
        ret = 0.0
        reached = False
        transitions: list[Transition] = []
        rollout_usage = {PARAMETRIC: 0, NONPARAMETRIC: 0}
        for t in range(cfg.horizon):
            a = ctx.policy.sample(x, rng)
            if forced_model is not None:
                kind = forced_model
            elif cfg.selector.mode == "mcts":
                kind = mcts_select(
                    ctx, x, a, cfg.selector, rng=rng,
                    remaining=cfg.horizon - t, trace=mcts_trace,
                )
            else:
                kind = greedy_select(ctx, x, a)
            try:
                x_next, r = ctx.model(kind).predict(x, a)
            except NoSupportError:
                if forced_model is None:
                    raise  # both experts failed: selection had no way out
                break
            rollout_usage[kind] += 1
            transitions.append(Transition(x, a, r, x_next, traj_id=n, t=t))
            ret += (cfg.gamma**t) * r
            x = x_next
            if ctx.is_terminal is not None and ctx.is_terminal(x):
                reached = True
                break
        if ctx.is_terminal is not None and not reached:
            unreached += 1
        returns.append(ret)
        trajectories.append(Trajectory(tuple(transitions), terminated=reached))
        usage[PARAMETRIC] += rollout_usage[PARAMETRIC]
        usage[NONPARAMETRIC] += rollout_usage[NONPARAMETRIC]
        records.append(
            {
                "rollout": n,
                "seed": [cfg.seed, n],
                "return": ret,
                "steps": len(transitions),
                "reached_goal": reached,
                "model_usage": dict(rollout_usage),
            }
        )
    v_hat = float(np.mean(returns))
    return ValueEstimate(
        v_hat=v_hat,
        per_rollout_returns=returns,
        n_unreached_goal=unreached,
        model_usage=usage,
        trajectories=trajectories,
        rollout_records=records,
    )


def write_rollout_jsonl(estimate: ValueEstimate, path: str | Path) -> None:
    """One JSON line per rollout: seed, return, steps, goal flag."""
    with Path(path).open("w") as fh:
        for rec in estimate.rollout_records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def trajectory_error(sim: Trajectory, truth: Trajectory, metric: Metric) -> float:
    """Summed state distance between a simulated and a reference trajectory
    from the same start, truncated to the shorter state sequence."""
    sim_states = sim.states
    true_states = truth.states
    if not sim_states or not true_states:
        return 0.0
    if not np.array_equal(sim_states[0], true_states[0]):
        raise ValueError("trajectories must start from the same initial state")
    n = min(len(sim_states), len(true_states))
    return float(
        sum(metric.distance(sim_states[t], true_states[t]) for t in range(n))
    )


def rollout_policy(
    env,
    policy: Policy,
    x0: StateVec,
    horizon: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Roll the true environment forward from x0 under the policy."""
    x = np.array(x0, dtype=np.float64)
    transitions = []
    reached = False
    for t in range(horizon):
        a = policy.sample(x, rng)
        x_next, r = env.step(x, a)
        transitions.append(Transition(x, a, r, x_next, traj_id=0, t=t))
        x = x_next
        if env.is_terminal is not None and env.is_terminal(x):
            reached = True
            break
    return Trajectory(tuple(transitions), terminated=reached)


def evaluate_policy_true(
    env,
    policy: Policy,
    n: int,
    horizon: int,
    gamma: float,
    seed: int = 0,
) -> float:
    """Ground-truth value: mean return of n on-policy rollouts in the true
    environment.  This is the reference for all RMSE metrics."""
    total = 0.0
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        x0 = env.sample_initial(rng)
        traj = rollout_policy(env, policy, x0, horizon, rng)
        total += trajectory_return(traj, gamma)
    return total / n
