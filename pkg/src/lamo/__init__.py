"""Locally adaptive online multi-objective prediction.

An adversary keeps weights over a finite set of objectives (multiaccuracy,
multicalibration, coverage, prediction error relative to a baseline) and a
learner answers each round with the minimax prediction against those
weights.  Fixed Share weights give guarantees on every interval of a chosen
width, not only over the whole horizon.
"""
from .data import SampleStream, ShiftScenario, gen_jump_shift, gen_switch, load_compas, load_gefcom
from .engine import RunConfig, RunTrace, read_trace, run_episode, run_matrix
from .estimators import OnlineMultiObjectivePredictor
from .evaluation import (
    WindowSpec,
    local_multiaccuracy_error,
    local_prediction_error,
    total_error,
    verify_interval_bounds,
)
from .objectives import LabelRange, ObjectiveSet, ProblemSpec
from .solvers import SolverSettings, best_response, solve_mean_ma_pred, solve_zero_sum
from .weights import AdaptiveObjectivesHedge, FixedShare, Hedge

__version__ = "0.1.0"

__all__ = [
    "AdaptiveObjectivesHedge", "FixedShare", "Hedge", "LabelRange", "ObjectiveSet",
    "OnlineMultiObjectivePredictor", "ProblemSpec", "RunConfig", "RunTrace", "SampleStream", "ShiftScenario",
    "SolverSettings", "WindowSpec", "best_response", "gen_jump_shift", "gen_switch", "load_compas",
    "load_gefcom", "local_multiaccuracy_error", "local_prediction_error", "read_trace", "run_episode",
    "run_matrix", "solve_mean_ma_pred", "solve_zero_sum", "total_error", "verify_interval_bounds",
]
