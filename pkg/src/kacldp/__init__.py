"""Glauber dynamics with Kac potentials and large-deviation costs of interface motion."""
from .kernel import (
    KacKernel, KacSystem, CoarseGeometry, LatticeGeometry, SpinConfig,
    default_kernel, make_kernel, rate_bounds,
)
from .field import Field, Grid, free_energy, instanton_solve, mean_field_fixed_point, mobility
from .cost import PathProfile, action, cost_density, nucleation_cost, optimal_nucleation
from .glauber import EventLog, simulate, simulate_batch, simulate_tilted
from .tubelet import (
    DEFAULT_SCHEDULE, DiscretizedPath, ScaleSchedule, discrete_action, move_away, tube_membership,
    validate_schedule,
)
from .harness import ExperimentConfig, RunRecord, emit_report, load_record, run_switching_experiment, run_tube_experiment

__all__ = [
    "KacKernel", "KacSystem", "CoarseGeometry", "LatticeGeometry", "SpinConfig", "default_kernel",
    "make_kernel", "rate_bounds", "Field", "Grid", "free_energy", "instanton_solve",
    "mean_field_fixed_point", "mobility", "PathProfile", "action", "cost_density", "nucleation_cost",
    "optimal_nucleation", "EventLog", "simulate", "simulate_batch", "simulate_tilted",
    "DEFAULT_SCHEDULE", "DiscretizedPath", "ScaleSchedule", "discrete_action", "move_away",
    "tube_membership", "validate_schedule", "ExperimentConfig", "RunRecord", "emit_report",
    "load_record", "run_switching_experiment", "run_tube_experiment",
]
__version__ = "0.1.0"
