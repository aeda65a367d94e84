"""Cost-function learning from demonstrations through a differentiable backward A* planner."""
from .belief import BeliefState, SensorModelParams, belief_param_grad, inverse_log_odds, occupancy_prob, update_belief
from .cost import CostEncoderParams, cost_field, cost_grads, expected_cost
from .evaluation import (
    DynaConfig,
    EvalMetrics,
    RolloutResult,
    bench_planner,
    dyna_blocking_maze,
    evaluate,
    rollout,
)
from .gridworld import Control, Demonstration, GridMap, State, generate_dataset, generate_demo, generate_map, step
from .planner import PlanResult, astar_backward, boltzmann_policy, dp_backward, q_values, visitation_subgradient
from .sensor import LidarScan, SensorConfig, add_noise, cast_rays
from .trainer import CostLearner, ThetaParams, nll_loss, policy_grad_wrt_q, step_gradient, train

__version__ = "0.1.0"
