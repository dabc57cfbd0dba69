"""aggne - distributed optimal Nash equilibrium seeking in aggregative games."""

# flake8: noqa

__version__ = "0.1.0"

from aggne.game import (
    AggregativeGame,
    CallbackAggregativeGame,
    GameConstants,
    GameDims,
    QuadraticAggregativeGame,
    check_gradients,
    estimate_constants,
    ev_game,
    paper_ev_game,
    pseudo_gradient,
    social_gradient,
)
from aggne.graph import (
    MixingMatrix,
    Topology,
    build_metropolis,
    random_connected_topology,
    spectral_gap,
)
from aggne.oracle import (
    OptimalNE,
    RegularizedSolution,
    ne_residual,
    solve_optimal_ne_qp,
    solve_regularized_vi,
    tikhonov_trajectory,
)
from aggne.solver import (
    SafeBound,
    SolverState,
    StepSchedule,
    gamma0_safe_bound,
    init_state,
    iterate,
    run,
    step,
)
from aggne.trace import Trace, read_trace, write_trace

__all__ = [
    "AggregativeGame",
    "CallbackAggregativeGame",
    "GameConstants",
    "GameDims",
    "MixingMatrix",
    "OptimalNE",
    "QuadraticAggregativeGame",
    "RegularizedSolution",
    "SafeBound",
    "SolverState",
    "StepSchedule",
    "Topology",
    "Trace",
    "build_metropolis",
    "check_gradients",
    "estimate_constants",
    "ev_game",
    "gamma0_safe_bound",
    "init_state",
    "iterate",
    "ne_residual",
    "paper_ev_game",
    "pseudo_gradient",
    "random_connected_topology",
    "read_trace",
    "run",
    "social_gradient",
    "solve_optimal_ne_qp",
    "solve_regularized_vi",
    "spectral_gap",
    "step",
    "tikhonov_trajectory",
    "write_trace",
]
