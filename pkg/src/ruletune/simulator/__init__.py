"""Synthetic knob-controlled systems with a ground-truth optimum."""

from ruletune.simulator.expr import Expression, ExpressionError
from ruletune.simulator.scenario import (
    SHIPPED_SCENARIOS,
    Evaluation,
    Scenario,
    SimulatorAdapter,
    evaluate,
    grid_axis,
    ground_truth_optimum,
    load_scenario,
    true_performance,
)

__all__ = [
    "SHIPPED_SCENARIOS",
    "Evaluation",
    "Expression",
    "ExpressionError",
    "Scenario",
    "SimulatorAdapter",
    "evaluate",
    "grid_axis",
    "ground_truth_optimum",
    "load_scenario",
    "true_performance",
]
