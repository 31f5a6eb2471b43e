"""Balanced expert placement: model, exact and heuristic solvers, baselines."""

from .anneal import AnnealParams, anneal_partition
from .core import (
    LEVELS,
    PLACEMENT_SCHEMA,
    Placement,
    SolveReport,
    Topology,
    contiguous_placement,
    crossings_for_groups,
    objective_crossings,
    random_placement,
)
from .exact import DEFAULT_STATE_CAP, balanced_assignments, exact_partition, num_balanced_assignments
from .ilp import IlpModel, build_ilp, export_lp
from .solvers import (
    exact_reference,
    relative_gap,
    solve_exact_dp,
    solve_local_search,
    solve_placement,
    SOLVERS,
    solve_staged,
    weighted_cost,
)
