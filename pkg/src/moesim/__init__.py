"""moesim: batch off-policy evaluation with a mixture-of-experts simulator.

Rollouts under the evaluation policy are generated by switching, per step,
between a learned parametric dynamics model and a nearest-neighbor
nonparametric model, either greedily by local error estimates or by UCT
planning against the return-error bound.
"""

__version__ = "0.1.0"

from .core import (
    Dataset,
    Metric,
    Policy,
    Trajectory,
    Transition,
    read_dataset_csv,
    trajectory_return,
    write_dataset_csv,
)
from .errors import (
    BoundParams,
    ErrorEstimate,
    LipschitzEstimates,
    choose_radius,
    estimate_lipschitz,
    global_lipschitz,
    np_error_estimate,
    p_error_estimate,
    return_error_bound,
    rollforward_state_error,
)
from .models import (
    NONPARAMETRIC,
    PARAMETRIC,
    DynamicsModel,
    FunctionModel,
    MLPModel,
    NonparametricModel,
    NoSupportError,
    ParametricFitConfig,
    RidgePerActionModel,
    fit_parametric,
)
from .selection import (
    PlanNode,
    SelectionContext,
    SelectorConfig,
    greedy_select,
    mcts_select,
)
from .simulator import (
    SimConfig,
    ValueEstimate,
    evaluate_policy_true,
    simulate_value,
    trajectory_error,
)
from .baselines import ISInput, ModelValueFunctions, is_estimate

__all__ = [
    "Dataset",
    "Metric",
    "Policy",
    "Trajectory",
    "Transition",
    "read_dataset_csv",
    "trajectory_return",
    "write_dataset_csv",
    "BoundParams",
    "ErrorEstimate",
    "LipschitzEstimates",
    "choose_radius",
    "estimate_lipschitz",
    "global_lipschitz",
    "np_error_estimate",
    "p_error_estimate",
    "return_error_bound",
    "rollforward_state_error",
    "NONPARAMETRIC",
    "PARAMETRIC",
    "DynamicsModel",
    "FunctionModel",
    "MLPModel",
    "NonparametricModel",
    "NoSupportError",
    "ParametricFitConfig",
    "RidgePerActionModel",
    "fit_parametric",
    "PlanNode",
    "SelectionContext",
    "SelectorConfig",
    "greedy_select",
    "mcts_select",
    "SimConfig",
    "ValueEstimate",
    "evaluate_policy_true",
    "simulate_value",
    "trajectory_error",
    "ISInput",
    "ModelValueFunctions",
    "is_estimate",
]
