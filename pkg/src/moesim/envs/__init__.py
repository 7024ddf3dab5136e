from .base import (
    Environment,
    generate_trajectories,
    make_eps_greedy,
    rollout_with_probs,
)
from .windy import Windy2DConfig, make_windy2d, windy2d_step
from .planning_toy import (
    make_planning_toy,
    planning_toy_policies,
    planning_toy_parametric_model,
    planning_toy_reward_model,
    planning_toy_step,
)
from .acrobot import (
    AcrobotConfig,
    acrobot_heuristic_policy,
    acrobot_step,
    filter_dataset_by_height,
    make_acrobot,
    tip_height,
)
from .ode import DivergedError, ODESpec, ode_env

__all__ = [
    "Environment",
    "generate_trajectories",
    "make_eps_greedy",
    "rollout_with_probs",
    "Windy2DConfig",
    "make_windy2d",
    "windy2d_step",
    "make_planning_toy",
    "planning_toy_policies",
    "planning_toy_parametric_model",
    "planning_toy_reward_model",
    "planning_toy_step",
    "AcrobotConfig",
    "acrobot_heuristic_policy",
    "acrobot_step",
    "filter_dataset_by_height",
    "make_acrobot",
    "tip_height",
    "DivergedError",
    "ODESpec",
    "ode_env",
]
