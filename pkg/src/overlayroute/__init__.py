"""Price-based adaptive routing for overlay networks over a legacy underlay."""

__version__ = "0.1.0"

from .network import (Bernoulli, Deterministic, FlowSpec, Link, NetworkSpec, Node, QueueState,
                      SlotRecord, ValidationReport, sample_arrivals, sample_capacities, serve_and_route,
                      validate)
from .schedules import Step, StepSchedule
from .qlearning import QRouter, QTable, action_space, holding_cost, q_update, select_action
from .pricing import PriceController, dual_function_estimate, price_update
from .budget import (BudgetTuner, integrate_replicator_ode, lyapunov_value, monotonicity_probe,
                     project_simplex, replicator_step)
from .controllers import REGISTRY, Controller, Observation, make_controller
from .engine import MetricsLog, SimConfig, run_simulation, sweep_arrival_rate
from .scenario import Scenario, load_scenario, bundled_scenario

__all__ = [
    "Bernoulli", "Deterministic", "FlowSpec", "Link", "NetworkSpec", "Node", "QueueState", "SlotRecord",
    "ValidationReport", "sample_arrivals", "sample_capacities", "serve_and_route", "validate",
    "Step", "StepSchedule", "QRouter", "QTable", "action_space", "holding_cost", "q_update",
    "select_action", "PriceController", "dual_function_estimate", "price_update", "BudgetTuner",
    "integrate_replicator_ode", "lyapunov_value", "monotonicity_probe", "project_simplex",
    "replicator_step", "REGISTRY", "Controller", "Observation", "make_controller", "MetricsLog",
    "SimConfig", "run_simulation", "sweep_arrival_rate", "Scenario", "load_scenario", "bundled_scenario",
]
